use std::path::Path;

use acnet_core::data::io::{load_dataset, load_depth, load_rgb, save_dataset};
use acnet_core::data::synth::{synth_generate, CueMode, SynthSpec};
use acnet_core::Error;
use image::{GrayImage, ImageBuffer, Luma, RgbImage};

fn layout(root: &Path) {
    for d in ["rgb", "depth", "label"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
}

fn write_sample(root: &Path, stem: &str, depth_mm: u16) {
    RgbImage::from_pixel(4, 3, image::Rgb([255, 0, 51]))
        .save(root.join("rgb").join(format!("{stem}.png")))
        .unwrap();
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_pixel(4, 3, Luma([depth_mm]))
        .save(root.join("depth").join(format!("{stem}.png")))
        .unwrap();
    GrayImage::from_pixel(4, 3, Luma([2]))
        .save(root.join("label").join(format!("{stem}.png")))
        .unwrap();
}

#[test]
fn depth_millimeters_become_meters() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    write_sample(dir.path(), "a", 1500);
    let depth = load_depth(&dir.path().join("depth/a.png")).unwrap();
    assert!(depth.data.iter().all(|&v| v == 1.5));
    let rgb = load_rgb(&dir.path().join("rgb/a.png")).unwrap();
    assert_eq!(rgb.pixel(0, 0), &[1.0, 0.0, 0.2]);
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.names, ["a"]);
    assert_eq!((ds.samples[0].height(), ds.samples[0].width()), (3, 4));
    assert!(ds.samples[0].label.data.iter().all(|&l| l == 2));
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    assert!(matches!(load_dataset(dir.path()), Err(Error::NoSamples(_))));
}

#[test]
fn unmatched_stems_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    write_sample(dir.path(), "a", 1000);
    write_sample(dir.path(), "b", 1000);
    std::fs::remove_file(dir.path().join("depth/b.png")).unwrap();
    std::fs::remove_file(dir.path().join("label/a.png")).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::UnmatchedStems(list)) => assert_eq!(list, "a, b"),
        other => panic!("expected unmatched stems, got {other:?}"),
    }
}

#[test]
fn eight_bit_depth_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    write_sample(dir.path(), "a", 1000);
    GrayImage::from_pixel(4, 3, Luma([9])).save(dir.path().join("depth/a.png")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Image { .. })));
}

#[test]
fn saved_dataset_loads_back() {
    let spec = SynthSpec {
        count: 3,
        height: 32,
        width: 32,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.names, ds.names);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.label, b.label);
        let rgb_err = a.rgb.data.iter().zip(&b.rgb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(rgb_err <= 0.5 / 255.0 + 1e-6, "rgb error {rgb_err}");
        let depth_err = a.depth.data.iter().zip(&b.depth.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(depth_err <= 0.0005 + 1e-6, "depth error {depth_err}");
    }
}

#[test]
fn cue_modes_keep_labels() {
    let base = SynthSpec {
        count: 2,
        height: 32,
        width: 32,
        ..SynthSpec::default()
    };
    let both = synth_generate(&base).unwrap();
    for cue_mode in [CueMode::ColorOnly, CueMode::DepthOnly] {
        let ds = synth_generate(&SynthSpec { cue_mode, ..base.clone() }).unwrap();
        for (a, b) in both.samples.iter().zip(&ds.samples) {
            assert_eq!(a.label, b.label);
        }
    }
}
