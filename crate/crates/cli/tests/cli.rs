use std::path::Path;
use std::process::{Command, Output};

use synthact::exec::ExecMode;
use synthact::fixtures::synthetic_orbit;
use synthact::formats::Manifest;
use synthact::recon::{parse_trajectory, write_rgbd_dir};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_synthact"));
    c.env_remove("SYNTHACT_OUTPUT_ROOT");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "output_root = \"out\"\nsubjects = [\"s1\"]\nactions = [\"hand_waving\"]\nclips_per_action = 1\nmethods = [\"BG+R\", \"3D+M\"]\n{extra}\n[render]\nresolution = 48\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn manifest(root: &Path) -> Manifest {
    Manifest::from_json(&std::fs::read(root.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn generate_stats_weights_export_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = run(bin().args(["generate", "--flows", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 0);
    let root = dir.path().join("out");
    let m = manifest(&root);
    assert_eq!(m.entries.len(), 2);
    assert!(m.entries.iter().all(|e| e.flow_path.is_some()));

    let out = run(bin().args(["stats", "--audit", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("clips: 2 (2 with flow, 0 errors)"));

    let out = run(bin().args(["weights", "--subset", "BG+R", "--rgb", "-1", "--flow", "1", "--root"]).arg(&root));
    assert_eq!(code(&out), 2);
    let out = run(bin().args(["weights", "--subset", "BG+R", "--rgb", "2", "--flow", "0.5", "--root"]).arg(&root));
    assert_eq!(code(&out), 0);
    let w = &manifest(&root).weights.0["BG+R"];
    assert_eq!((w.rgb, w.flow), (2.0, 0.5));

    let clip = root.join(&m.entries[0].path);
    let pngs = dir.path().join("pngs");
    assert_eq!(code(&run(bin().arg("export-png").arg(&clip).arg("--out").arg(&pngs))), 0);
    assert_eq!(std::fs::read_dir(&pngs).unwrap().count(), m.entries[0].frame_count as usize);

    // The 48 px clip is upscaled to 224: one crop.
    let pre = dir.path().join("pre");
    assert_eq!(code(&run(bin().arg("preprocess").arg(&clip).arg("--out").arg(&pre))), 0);
    let npy = std::fs::read(pre.join("crop_0.npy")).unwrap();
    assert_eq!(&npy[..6], b"\x93NUMPY");
    let header = String::from_utf8_lossy(&npy[..128]);
    assert!(header.contains("(50, 224, 224, 3, )"), "{header}");
    assert!(!pre.join("crop_1.npy").exists());

    // PNG sequences at 50 fps halve in length.
    let pre2 = dir.path().join("pre2");
    assert_eq!(code(&run(bin().arg("preprocess").arg(&pngs).args(["--fps", "50", "--out"]).arg(&pre2))), 0);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(pre2.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["frames"], 25);

    // Rerun renders nothing.
    let out = run(bin().args(["generate", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rendered 0, reused 2"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "clips_per_action = 0\n").unwrap();
    assert_eq!(code(&run(bin().args(["generate", "--config"]).arg(&bad))), 2);
    let missing = tiny_config(dir.path(), "[assets]\nbody = \"nope.json\"");
    assert_eq!(code(&run(bin().args(["generate", "--config"]).arg(&missing))), 2);
    assert_eq!(code(&run(bin().args(["stats", "--root"]).arg(dir.path().join("nothing")))), 2);
    assert_eq!(code(&run(bin().arg("no-such-command"))), 2);
}

#[test]
fn partial_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("takes")).unwrap();
    let cfg = tiny_config(dir.path(), "[assets]\nmotion_dir = \"takes\"");
    assert_eq!(code(&run(bin().args(["generate", "--config"]).arg(&cfg))), 1);
    let m = manifest(&dir.path().join("out"));
    assert_eq!((m.entries.len(), m.errors.len()), (0, 2));
}

#[test]
fn env_overrides_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let elsewhere = dir.path().join("elsewhere");
    let out = run(bin().env("SYNTHACT_OUTPUT_ROOT", &elsewhere).args(["generate", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 0);
    assert!(elsewhere.join("manifest.json").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn dry_run_counts_full_dataset() {
    let out = run(bin().args(["generate", "--dry-run"]));
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("clips: 2250"));
    assert!(text.contains("walking 750"));
    assert!(text.contains("R3D+R 450"));
}

#[test]
fn reconstruct_fixture_and_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&run(bin().arg("reconstruct").arg(&empty).arg("--out").arg(dir.path().join("r0")))), 2);

    let data = synthetic_orbit(20, 128, ExecMode::Parallel).unwrap();
    let input = dir.path().join("rgbd");
    write_rgbd_dir(&input, &data.frames).unwrap();
    let out_dir = dir.path().join("r1");
    assert_eq!(code(&run(bin().arg("reconstruct").arg(&input).arg("--out").arg(&out_dir))), 0);
    let traj = parse_trajectory(&std::fs::read_to_string(out_dir.join("trajectory.txt")).unwrap()).unwrap();
    assert_eq!(traj.len(), 20);
    let ate = synthact::recon::absolute_trajectory_error(&traj, &data.poses).unwrap();
    assert!(ate < 0.02, "{ate}");
    let mesh = synthact::formats::parse_ply(&std::fs::read(out_dir.join("mesh.ply")).unwrap()).unwrap();
    assert!(!mesh.triangles.is_empty());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], 20);

    let single = dir.path().join("single");
    write_rgbd_dir(&single, &data.frames[..1]).unwrap();
    let out_dir = dir.path().join("r2");
    assert_eq!(code(&run(bin().arg("reconstruct").arg(&single).arg("--out").arg(&out_dir))), 0);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["fragments"], 1);
    assert!(report["mesh_vertices"].as_u64().unwrap() > 0);
}

#[test]
fn shipped_configs_are_the_defaults() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config");
    let cfg = synthact::pipeline::PipelineConfig::load(&dir.join("synthact.toml")).unwrap();
    let expect = synthact::pipeline::PipelineConfig { base_dir: cfg.base_dir.clone(), ..Default::default() };
    assert_eq!(cfg, expect);
    let text = std::fs::read_to_string(dir.join("recon.toml")).unwrap();
    let recon: synthact::recon::ReconConfig = toml::from_str(&text).unwrap();
    assert_eq!(recon, synthact::recon::ReconConfig::default());
    let out = run(bin().args(["generate", "--dry-run", "--config"]).arg(dir.join("synthact.toml")));
    assert!(String::from_utf8_lossy(&out.stdout).contains("clips: 2250"));
}
