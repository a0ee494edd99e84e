use std::io::Cursor;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surface_fixtures::io::{
    read_cloud, read_cloud_file, read_scalar_field, read_vector_field, write_cloud, write_field, CloudData, FieldRef,
    IoError, PlyFormat, SpecFile,
};
use surface_fixtures::{ScalarField, TangentVectorField, Vec3};

const FORMATS: [PlyFormat; 3] = [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian, PlyFormat::BinaryBigEndian];

fn round_trip(data: &CloudData, format: PlyFormat) -> CloudData {
    let mut bytes = Vec::new();
    write_cloud(&mut bytes, data, format).unwrap();
    read_cloud(Cursor::new(bytes)).unwrap()
}

#[test]
fn three_vertex_ascii() {
    let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty int region\nend_header\n0 0 0 0\n1 0 0 1\n0 1 0 1\n";
    let data = read_cloud(Cursor::new(text)).unwrap();
    assert_eq!(data.positions.len(), 3);
    assert_eq!(data.labels, vec![0, 1, 1]);
    assert_eq!(data.positions[1], Vec3::new(1.0, 0.0, 0.0));
}

#[test]
fn missing_region_property_means_free() {
    let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n1 2 3\n";
    assert_eq!(read_cloud(Cursor::new(text)).unwrap().labels, vec![0, 0]);
}

#[test]
fn ten_thousand_points_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let data = CloudData {
        positions: (0..n)
            .map(|_| Vec3::new(rng.random::<f64>() * 1e3 - 500.0, rng.random::<f64>() * 1e-3, rng.random::<f64>()))
            .collect(),
        normals: None,
        colors: Some((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()),
        labels: (0..n).map(|_| rng.random_range(0..7)).collect(),
    };
    for format in FORMATS {
        let back = round_trip(&data, format);
        assert_eq!(back.labels, data.labels);
        assert_eq!(back.colors, data.colors);
        for (a, b) in data.positions.iter().zip(&back.positions) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits(), "{format:?}");
            }
        }
    }
}

#[test]
fn file_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ply");
    let err = read_cloud_file(&missing).unwrap_err();
    assert!(matches!(err, IoError::Open { .. }));
    assert!(err.to_string().contains("absent.ply"));
}

#[test]
fn spec_rejects_absent_region() {
    let spec = SpecFile::parse(r#"{"kind":"value","regions":{"1":{"role":"value","value":5},"4":{"role":"value","value":1}},"k":12,"tolerance":1e-9}"#)
        .unwrap();
    match spec.to_fixture_spec(&[0, 1, 1, 2]) {
        Err(IoError::InvalidSpec { location, .. }) => assert_eq!(location, "regions.4"),
        other => panic!("{other:?}"),
    }
    assert!(spec.to_fixture_spec(&[0, 1, 4]).is_ok());
}

#[test]
fn spec_round_trips_through_json() {
    let text = r#"{"kind":"guidance","regions":{"1":{"role":"obstacle"},"2":{"role":"target"}},"k":3,"t_d":0.5,"tolerance":1e-6,"seed":9}"#;
    let spec = SpecFile::parse(text).unwrap();
    assert_eq!(SpecFile::parse(&spec.to_json()).unwrap(), spec);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clouds_round_trip(
        rows in prop::collection::vec((finite(), finite(), finite(), 0u32..50), 1..60),
        format in prop::sample::select(FORMATS.to_vec()),
    ) {
        let data = CloudData {
            positions: rows.iter().map(|r| Vec3::new(r.0, r.1, r.2)).collect(),
            labels: rows.iter().map(|r| r.3).collect(),
            ..CloudData::default()
        };
        let back = round_trip(&data, format);
        prop_assert_eq!(&back.labels, &data.labels);
        for (a, b) in data.positions.iter().zip(&back.positions) {
            for c in 0..3 {
                prop_assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn scalar_fields_round_trip(
        rows in prop::collection::vec((finite(), any::<bool>()), 1..60),
        format in prop::sample::select(FORMATS.to_vec()),
    ) {
        let positions: Vec<Vec3> = (0..rows.len()).map(|i| Vec3::new(i as f64, 0.5, -1.0)).collect();
        let field = ScalarField::with_mask(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect());
        let mut bytes = Vec::new();
        write_field(&mut bytes, &positions, FieldRef::Scalar(&field), format).unwrap();
        let back = read_scalar_field(Cursor::new(bytes)).unwrap();
        for i in 0..rows.len() {
            prop_assert_eq!(back.is_defined(i), field.is_defined(i));
            match field.get(i) {
                Some(v) => prop_assert_eq!(back.values[i].to_bits(), v.to_bits()),
                None => prop_assert!(back.values[i].is_nan()),
            }
        }
    }

    #[test]
    fn vector_fields_round_trip(
        rows in prop::collection::vec((finite(), finite(), finite(), any::<bool>()), 1..40),
        format in prop::sample::select(FORMATS.to_vec()),
    ) {
        let positions: Vec<Vec3> = (0..rows.len()).map(|i| Vec3::new(0.0, i as f64, 0.0)).collect();
        let mut field = TangentVectorField::undefined(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.3 {
                field.set(i, Vec3::new(r.0, r.1, r.2));
            }
        }
        let mut bytes = Vec::new();
        write_field(&mut bytes, &positions, FieldRef::Vector(&field), format).unwrap();
        let back = read_vector_field(Cursor::new(bytes)).unwrap();
        prop_assert_eq!(&back.defined, &field.defined);
        for i in 0..rows.len() {
            if let Some(v) = field.get(i) {
                prop_assert_eq!(back.get(i), Some(v));
            }
        }
    }
}

#[test]
fn schema_matches_parser() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/spec.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let keys: Vec<&str> = schema["properties"].as_object().unwrap().keys().map(String::as_str).collect();
    let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let full = r#"{"kind":"value","regions":{"1":{"role":"value","value":1}},"k":12,"epsilon":0.1,"t_d":0.1,"tolerance":1e-9,"seed":1}"#;
    let full: serde_json::Value = serde_json::from_str(full).unwrap();
    let mut full_keys: Vec<&str> = full.as_object().unwrap().keys().map(String::as_str).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    full_keys.sort();
    assert_eq!(sorted, full_keys);
    assert!(SpecFile::parse(&full.to_string()).is_ok());
    for key in keys {
        let mut reduced = full.clone();
        reduced.as_object_mut().unwrap().remove(key);
        assert_eq!(SpecFile::parse(&reduced.to_string()).is_ok(), !required.contains(&key), "{key}");
    }
}
