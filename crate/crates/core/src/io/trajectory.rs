//! Agent trajectories as CSV: `agent_id,step,x,y,z,outcome`, one row per
//! sample. Every row of an agent repeats its final outcome.

use std::io::Write;

use crate::fixtures::Trajectory;

use super::IoError;

pub const HEADER: [&str; 6] = ["agent_id", "step", "x", "y", "z", "outcome"];

pub fn write_trajectories(out: impl Write, trajectories: &[Trajectory]) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(HEADER)?;
    for t in trajectories {
        for (step, p) in t.points.iter().enumerate() {
            writer.write_record([
                t.agent.to_string(),
                step.to_string(),
                format!("{:?}", p.x),
                format!("{:?}", p.y),
                format!("{:?}", p.z),
                t.outcome.as_str().to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::Outcome;
    use crate::Vec3;

    #[test]
    fn rows_per_sample() {
        let t = Trajectory {
            agent: 3,
            start: 0,
            points: vec![Vec3::zeros(), Vec3::new(0.5, 0.25, 1.0)],
            nearest: vec![0, 1],
            outcome: Outcome::Success,
            steps: 1,
        };
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[t]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "agent_id,step,x,y,z,outcome\n3,0,0.0,0.0,0.0,success\n3,1,0.5,0.25,1.0,success\n"
        );
    }
}
