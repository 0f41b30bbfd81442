use sclstm_core::io::{ingest_image_dir, read_sclw, sclw_bytes, write_sclw};
use sclstm_core::{build_model, Error, Fusion, ModelConfig, StreamSet, Tensor, WeightStore};

#[test]
fn solid_color_ppm_frames_ingest_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let colors = [[255u8, 0, 0], [0, 128, 0], [7, 8, 9]];
    // Written out of order; ingest sorts by name.
    for (i, c) in colors.iter().enumerate().rev() {
        let img = image::RgbImage::from_pixel(5, 4, image::Rgb(*c));
        img.save(dir.path().join(format!("frame_{i:05}.ppm"))).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let clip = ingest_image_dir(dir.path()).unwrap();
    assert_eq!(clip.dims(), (3, 4, 5, 3));
    for (t, c) in colors.iter().enumerate() {
        for (ch, &v) in c.iter().enumerate() {
            assert_eq!(clip.frames().at(&[t, 2, 3, ch]), f32::from(v) / 255.0);
        }
    }
}

#[test]
fn empty_directory_is_an_image_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ingest_image_dir(dir.path()), Err(Error::Image { .. })));
}

#[test]
fn sclw_truncated_anywhere_is_rejected() {
    let mut s = WeightStore::default();
    s.insert("a", Tensor::from_fn(&[5, 3], |i| i as f32), true).unwrap();
    s.insert("b", Tensor::from_fn(&[2], |i| -(i as f32)), false).unwrap();
    let bytes = sclw_bytes(&s);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.sclw");
    for cut in 0..bytes.len() {
        std::fs::write(&p, &bytes[..cut]).unwrap();
        assert!(read_sclw(&p).is_err(), "accepted a file cut at {cut}");
    }
}

#[test]
fn model_weights_survive_a_round_trip() {
    let m = build_model(ModelConfig::tiny(Fusion::A, StreamSet::Both), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.sclw");
    write_sclw(&p, &m.weights).unwrap();
    let mut fresh = build_model(ModelConfig::tiny(Fusion::A, StreamSet::Both), 12).unwrap();
    fresh.weights.import_from(&read_sclw(&p).unwrap()).unwrap();
    assert_eq!(fresh.weights.iter().count(), m.weights.iter().count());
    for ((_, a), (_, b)) in fresh.weights.iter().zip(m.weights.iter()) {
        assert_eq!(a.tensor, b.tensor);
    }
}
