//! End-to-end checks of the `flashdiff` binary: experiment runs with CSV
//! output, config-file handling, the recovery tool, and the self test.

use std::path::Path;
use std::process::Command;

use flashdiff::bench::report::parse_csv;
use flashdiff::chip::{FlashChip, FlashGeometry, TimingProfile};
use flashdiff::driver::PageDriver;
use flashdiff::pdl::{PdlConfig, PdlDriver};

fn flashdiff() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flashdiff"))
}

fn run_args(csv: &Path, extra: &[&str]) -> Command {
    let mut cmd = flashdiff();
    cmd.args([
        "run",
        "--exp",
        "1",
        "--driver",
        "pdl256",
        "--driver",
        "opu",
        "--blocks",
        "32",
        "--db-mib",
        "1",
        "--measure-ops",
        "400",
        "--warmup-gc",
        "0.2",
        "--warmup-ops",
        "1500",
        "--csv",
    ]);
    cmd.arg(csv);
    cmd.args(extra);
    cmd
}

#[test]
fn run_emits_parseable_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    let out = run_args(&csv_a, &["--seed", "9"]).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PDL(256B)") && stdout.contains("OPU"), "table printed: {stdout}");

    let text_a = std::fs::read_to_string(&csv_a).unwrap();
    let rows = parse_csv(&text_a).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.experiment == "exp1" && r.ops == 400));

    // identical seed, identical bytes
    assert!(run_args(&csv_b, &["--seed", "9"]).output().unwrap().status.success());
    assert_eq!(text_a, std::fs::read_to_string(&csv_b).unwrap());

    // different seed, different numbers
    assert!(run_args(&csv_b, &["--seed", "10"]).output().unwrap().status.success());
    assert_ne!(text_a, std::fs::read_to_string(&csv_b).unwrap());
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let cfg_path = dir.path().join("run.conf");
    std::fs::write(
        &cfg_path,
        "# experiment settings\nexp = 1\ndriver = opu\nblocks = 32\ndb-mib = 1\n\
         measure-ops = 300\nwarmup-gc = 0.2\nwarmup-ops = 1000\nseed = 3\n",
    )
    .unwrap();

    let out = flashdiff()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].driver, "OPU");

    // the command line overrides the file
    let out = flashdiff()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--driver", "pdl2k", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows = parse_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows[0].driver, "PDL(2KB)");
}

#[test]
fn missing_experiment_id_fails() {
    let out = flashdiff().args(["run", "--driver", "opu"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--exp"));
}

#[test]
fn recover_tool_reports_and_repairs() {
    let dir = tempfile::tempdir().unwrap();
    let image_path = dir.path().join("chip.img");
    let repaired_path = dir.path().join("repaired.img");

    // a small chip with durable state plus one superseded base page
    let chip = FlashChip::new(FlashGeometry::desk(4), TimingProfile::standard()).unwrap();
    let mut driver = PdlDriver::new(chip, PdlConfig::whole_page());
    for pid in 0..10u32 {
        driver.write_logical(pid, &vec![pid as u8; 2048]).unwrap();
    }
    let mut update = vec![5u8; 2048];
    update[0..40].fill(0xEE);
    driver.write_logical(5, &update).unwrap();
    driver.write_through().unwrap();
    driver.into_chip().save_image(&image_path).unwrap();

    let out = flashdiff()
        .args(["recover", "--image"])
        .arg(&image_path)
        .args(["--dump-tables", "--repair"])
        .arg(&repaired_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("logical pages:    10"), "report: {stdout}");
    assert!(stdout.contains("pid,base_block,base_page,diff_block,diff_page"));

    // the repaired image is loadable and scans clean
    let mut repaired = FlashChip::load_image(&repaired_path, TimingProfile::standard()).unwrap();
    let state = flashdiff::maintenance::recovery::recover(&mut repaired).unwrap();
    assert_eq!(state.mutations, 0);
    assert_eq!(state.tables.mapping.len(), 10);
}

#[test]
fn recover_rejects_garbage_images() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bogus.img");
    std::fs::write(&path, b"not a chip image").unwrap();
    let out = flashdiff().args(["recover", "--image"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn selftest_passes() {
    let out = flashdiff().args(["selftest", "--quick"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "selftest output: {stdout}");
    assert!(stdout.contains("PASS chip ledger exactness"), "{stdout}");
    assert!(stdout.contains("PASS crash recovery soundness"), "{stdout}");
    assert!(stdout.contains("all checks passed"), "{stdout}");
}
