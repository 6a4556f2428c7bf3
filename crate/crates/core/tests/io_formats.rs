use std::path::{Path, PathBuf};

use deskew::io::{
    cloud_to_bytes, cloud_to_string, load_config, read_augmented_cloud, read_measurements,
    read_scan, read_truth, report_to_string, save_config, scan_to_string, write_augmented_cloud,
    write_report,
};
use deskew::pipeline::{process_scan, score_cloud, PipelineOptions, RefTime, Space};
use deskew::simulation::{run_monte_carlo, SimConfig};
use deskew::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn image_time() -> f64 {
    let info: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("episode.json")).unwrap()).unwrap();
    info["image_timestamp"].as_f64().unwrap()
}

#[test]
fn reads_the_76_packet_fixture() {
    let scan = read_scan(fixture("scan_76.txt")).unwrap();
    assert_eq!(scan.packets().len(), 76);
    assert_eq!(scan.num_points(), 76);
    assert!(scan.timestamps().windows(2).all(|w| w[1] > w[0]));
    // the fixture was produced by the writer, so re-serializing is byte-identical
    let text = std::fs::read_to_string(fixture("scan_76.txt")).unwrap();
    assert_eq!(scan_to_string(&scan), text);

    let ms = read_measurements(fixture("measurements.txt")).unwrap();
    assert_eq!(ms.len(), 81);
}

#[test]
fn golden_clouds_are_reproduced_byte_for_byte() {
    let scan = read_scan(fixture("scan_76.txt")).unwrap();
    let ms = read_measurements(fixture("measurements.txt")).unwrap();
    let cfg = load_config(fixture("sim_config.toml")).unwrap();

    let out = process_scan(&scan, &ms, &cfg, &PipelineOptions::default()).unwrap();
    let golden = std::fs::read_to_string(fixture("cloud_3d.golden.txt")).unwrap();
    assert_eq!(cloud_to_string(&out.points), golden);

    let opts = PipelineOptions {
        t_ref: RefTime::Image(image_time()),
        camera: Some(0),
        ..PipelineOptions::default()
    };
    let out = process_scan(&scan, &ms, &cfg, &opts).unwrap();
    let golden = std::fs::read_to_string(fixture("cloud_2d.golden.txt")).unwrap();
    assert_eq!(cloud_to_string(&out.points), golden);
    let golden = std::fs::read(fixture("cloud_2d.golden.bin")).unwrap();
    assert_eq!(cloud_to_bytes(&out.points), golden);

    // both encodings decode to the same records
    assert_eq!(
        read_augmented_cloud(fixture("cloud_2d.golden.bin")).unwrap(),
        out.points
    );
    assert_eq!(
        read_augmented_cloud(fixture("cloud_2d.golden.txt")).unwrap(),
        out.points
    );
}

#[test]
fn golden_clouds_are_consistent_with_truth() {
    let cloud = read_augmented_cloud(fixture("cloud_3d.golden.txt")).unwrap();
    let truth = read_truth(fixture("truth_3d.txt"), 3).unwrap();
    let s = score_cloud(&cloud, &truth, Space::Position).unwrap();
    assert_eq!((s.matched, s.missing), (76, 0));
    assert!(s.summary.in_bound_rate > 0.85);

    let cloud = read_augmented_cloud(fixture("cloud_2d.golden.bin")).unwrap();
    let truth = read_truth(fixture("truth_2d.txt"), 2).unwrap();
    let s = score_cloud(&cloud, &truth, Space::Pixel).unwrap();
    assert_eq!(s.missing, 0);
    assert!(s.summary.in_bound_rate > 0.85);
    // out-of-frame projections are kept
    assert!(cloud.iter().filter(|p| p.pixel.is_some()).count() > truth.len());
}

#[test]
fn write_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = read_augmented_cloud(fixture("cloud_2d.golden.txt")).unwrap();
    for binary in [false, true] {
        let path = dir.path().join(format!("c{binary}"));
        write_augmented_cloud(&cloud, &path, binary).unwrap();
        assert_eq!(read_augmented_cloud(&path).unwrap(), cloud);
        write_augmented_cloud(&[], &path, binary).unwrap();
        assert!(read_augmented_cloud(&path).unwrap().is_empty());
    }
    let text = dir.path().join("empty.txt");
    write_augmented_cloud(&[], &text, false).unwrap();
    let body = std::fs::read_to_string(&text).unwrap();
    assert!(body.starts_with('#') && body.lines().count() == 1);
}

#[test]
fn experiment_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = load_config(fixture("calibration.toml")).unwrap();
    assert_eq!(a.noise.v_std, [0.05; 3]);
    assert_eq!(a.noise.w_std_deg, [2.0; 3]);
    assert_eq!(a.noise.sigma_t, 0.0006);
    assert!(a.noise.linear_x_only);
    assert_eq!(a.cameras[0].id, 2);
    let path = dir.path().join("saved.toml");
    save_config(&a, &path).unwrap();
    let b = load_config(&path).unwrap();
    assert_eq!(a, b);
    let again = dir.path().join("again.toml");
    save_config(&b, &again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn malformed_inputs_are_rejected_with_locations() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let short = write(
        "short.txt",
        "# packet t x y z\n0 0.0 1.0 2.0 3.0\n1 0.1 1.0\n",
    );
    match read_scan(&short) {
        Err(Error::Data { line, path, .. }) => assert_eq!((line, path), (3, short)),
        other => panic!("unexpected {other:?}"),
    }
    let empty = write("empty.txt", "");
    assert!(matches!(read_scan(&empty), Err(Error::EmptyInput { .. })));
    assert!(matches!(
        read_measurements(&empty),
        Err(Error::EmptyInput { .. })
    ));
    let backwards = write("back.txt", "0.1 1 0 0 0 0 0\n0.05 1 0 0 0 0 0\n");
    assert!(matches!(
        read_measurements(&backwards),
        Err(Error::Data { line: 2, .. })
    ));
    let missing = dir.path().join("missing.txt");
    assert!(matches!(read_scan(&missing), Err(Error::Io { .. })));
    assert!(matches!(load_config(&missing), Err(Error::Config { .. })));

    let mut bin = std::fs::read(fixture("cloud_2d.golden.bin")).unwrap();
    bin.truncate(bin.len() - 3);
    let truncated = dir.path().join("t.bin");
    std::fs::write(&truncated, &bin).unwrap();
    assert!(matches!(
        read_augmented_cloud(&truncated),
        Err(Error::Data { .. })
    ));
}

#[test]
fn reports_are_stable_json() {
    let cfg = SimConfig {
        runs: 3,
        ..SimConfig::default()
    };
    let report = run_monte_carlo(&cfg).unwrap().report;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    write_report(&report, &a).unwrap();
    write_report(&report, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text, report_to_string(&report));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["runs"], 3);
    assert_eq!(v["nees_3d"]["dof"], 3);
}
