//! The `flashdiff` command line: experiment runner, chip-image recovery
//! tool, and the self-test invariant suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::bench::config::FileConfig;
use crate::bench::experiment::{default_drivers, pdl256_speedups, run_experiment, ExperimentConfig};
use crate::bench::harness::{run_cell, CellConfig, DriverKind, WarmupSpec};
use crate::bench::report::emit_report;
use crate::bench::workload::WorkloadParams;
use crate::chip::{FlashChip, FlashGeometry, PhysPageAddr, TimingProfile};
use crate::driver::PageDriver;
use crate::maintenance::crash::{inject_crash, CrashPlan};
use crate::maintenance::recovery::{materialize, recover, scan_cost};
use crate::pdl::{PdlConfig, PdlDriver};

#[derive(Parser)]
#[command(name = "flashdiff", version, about = "Flash-storage workbench: page-differential logging vs. baseline page-update methods")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one of the seven comparison experiments.
    Run(RunArgs),
    /// Rebuild the mapping tables from a chip-image file.
    Recover(RecoverArgs),
    /// Run the invariant self-test suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment id (1..=7).
    #[arg(long)]
    exp: Option<u8>,
    /// Driver to include (repeatable): pdl256|pdl2k|opu|ipu|ipl18|ipl64.
    #[arg(long = "driver")]
    drivers: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chip size in blocks (64 pages of 2 KiB each).
    #[arg(long)]
    blocks: Option<u32>,
    /// Database size in MiB.
    #[arg(long = "db-mib")]
    db_mib: Option<u64>,
    /// Write the result rows to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// key=value config file mirroring these flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Measured operations per sweep point.
    #[arg(long = "measure-ops")]
    measure_ops: Option<u64>,
    /// Warm up until garbage collection ran this often per block.
    #[arg(long = "warmup-gc")]
    warmup_gc: Option<f64>,
    /// Hard cap on warm-up operations per cell.
    #[arg(long = "warmup-ops")]
    warmup_ops: Option<u64>,
    /// Skip shadow-map auditing (faster, no self-checking).
    #[arg(long = "no-audit")]
    no_audit: bool,
}

#[derive(Args)]
struct RecoverArgs {
    /// Chip-image file to scan.
    #[arg(long)]
    image: PathBuf,
    /// Write the repaired image (useless pages marked obsolete) here.
    #[arg(long)]
    repair: Option<PathBuf>,
    /// Print every recovered mapping row.
    #[arg(long = "dump-tables")]
    dump_tables: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Smaller sweeps for a quicker pass.
    #[arg(long)]
    quick: bool,
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Recover(args) => cmd_recover(args),
        Cmd::Selftest(args) => return cmd_selftest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let exp = match args.exp.or(file.get_parsed::<u8>("exp")?) {
        Some(e) if (1..=7).contains(&e) => e,
        Some(e) => return Err(format!("experiment id {e} out of range 1..=7")),
        None => return Err("--exp is required (flag or config file)".into()),
    };
    let mut driver_names: Vec<String> = args.drivers;
    if driver_names.is_empty() {
        if let Some(raw) = file.get("driver") {
            driver_names = raw.split(',').map(|s| s.trim().to_string()).collect();
        }
    }
    let drivers: Vec<DriverKind> = if driver_names.is_empty() {
        default_drivers(exp)
    } else {
        driver_names
            .iter()
            .map(|name| {
                DriverKind::parse(name).ok_or_else(|| format!("unknown driver {name:?}"))
            })
            .collect::<Result<_, _>>()?
    };

    let mut cfg = ExperimentConfig::default();
    if let Some(seed) = args.seed.or(file.get_parsed("seed")?) {
        cfg.seed = seed;
    }
    if let Some(blocks) = args.blocks.or(file.get_parsed("blocks")?) {
        cfg.n_blocks = blocks;
    }
    if let Some(db_mib) = args.db_mib.or(file.get_parsed("db-mib")?) {
        cfg.db_bytes = db_mib * 1024 * 1024;
    }
    if let Some(ops) = args.measure_ops.or(file.get_parsed("measure-ops")?) {
        cfg.measure_ops = ops;
    }
    if let Some(gc) = args.warmup_gc.or(file.get_parsed("warmup-gc")?) {
        cfg.warmup.gc_per_block = gc;
    }
    if let Some(ops) = args.warmup_ops.or(file.get_parsed("warmup-ops")?) {
        cfg.warmup.max_ops = ops;
    }
    if args.no_audit || file.get("no-audit") == Some("true") {
        cfg.audit = false;
    }

    eprintln!(
        "running exp{exp} on {} blocks, {} MiB database, seed {} ...",
        cfg.n_blocks,
        cfg.db_bytes / (1024 * 1024),
        cfg.seed
    );
    let rows = run_experiment(exp, &drivers, &cfg).map_err(|e| e.to_string())?;
    let table = emit_report(&rows, args.csv.as_deref()).map_err(|e| e.to_string())?;
    print!("{table}");
    if exp == 4 {
        let speedups = pdl256_speedups(&rows);
        if !speedups.is_empty() {
            println!("\nPDL(256B) speedup (overall time ratio):");
            for (x, driver, ratio) in speedups {
                println!("  {x:>5.1}% updates vs {driver:<10} {ratio:.2}x");
            }
        }
    }
    if let Some(path) = &args.csv {
        eprintln!("csv written to {}", path.display());
    }
    Ok(())
}

fn cmd_recover(args: RecoverArgs) -> Result<(), String> {
    let mut chip =
        FlashChip::load_image(&args.image, TimingProfile::standard()).map_err(|e| e.to_string())?;
    let geometry = *chip.geometry();
    let state = recover(&mut chip).map_err(|e| e.to_string())?;
    println!("image:            {}", args.image.display());
    println!(
        "geometry:         {} blocks x {} pages ({} MiB data)",
        geometry.n_blocks,
        geometry.pages_per_block,
        geometry.total_data_bytes() / (1024 * 1024)
    );
    println!("pages scanned:    {}", geometry.total_pages());
    println!("scan time:        {:.3} s simulated", scan_cost(&geometry, chip.timing()) as f64 / 1e6);
    println!("logical pages:    {}", state.tables.mapping.len());
    println!("differential pages: {}", state.tables.vdct.len());
    println!("pages obsoleted:  {}", state.mutations);
    println!("decode warnings:  {}", state.warnings);
    println!("next timestamp:   {}", state.next_timestamp);
    if args.dump_tables {
        println!("pid,base_block,base_page,diff_block,diff_page");
        for (pid, (base, diff)) in &state.tables.mapping {
            match diff {
                Some(dp) => println!("{pid},{},{},{},{}", base.block, base.page, dp.block, dp.page),
                None => println!("{pid},{},{},,", base.block, base.page),
            }
        }
    }
    if let Some(path) = &args.repair {
        chip.save_image(path).map_err(|e| e.to_string())?;
        println!("repaired image:   {}", path.display());
    }
    Ok(())
}

type Check = Box<dyn FnOnce() -> Result<(), String>>;

fn cmd_selftest(args: SelftestArgs) -> ExitCode {
    let scale = if args.quick { 1 } else { 4 };
    let checks: Vec<(&str, Check)> = vec![
        ("chip ledger exactness", Box::new(move || selftest_chip(scale))),
        ("differential codec round-trip", Box::new(move || selftest_codec(200 * scale))),
        ("shadow-map equivalence", Box::new(move || selftest_oracle(600 * scale as u64))),
        ("crash recovery soundness", Box::new(move || selftest_recovery(scale))),
        ("recovery scan cost", Box::new(selftest_scan_cost)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        println!("selftest: all checks passed");
        ExitCode::SUCCESS
    } else {
        println!("selftest: {failed} check(s) failed");
        ExitCode::FAILURE
    }
}

fn selftest_chip(scale: u32) -> Result<(), String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
    let geometry = FlashGeometry::desk(4);
    let mut chip = FlashChip::new(geometry, TimingProfile::standard()).map_err(|e| e.to_string())?;
    let mut floor: Vec<Vec<u8>> = (0..geometry.total_pages())
        .map(|_| vec![0xFF; geometry.data_bytes])
        .collect();
    for _ in 0..400 * scale {
        let addr = PhysPageAddr::new(
            rng.gen_range(0..geometry.n_blocks),
            rng.gen_range(0..geometry.pages_per_block),
        );
        let idx = (addr.block * geometry.pages_per_block + addr.page) as usize;
        match rng.gen_range(0..3) {
            0 => {
                // only clear bits relative to the current floor
                let data: Vec<u8> =
                    floor[idx].iter().map(|&b| b & rng.gen::<u8>()).collect();
                chip.program_page(
                    addr,
                    &data,
                    crate::chip::SpareInit::new(crate::chip::PageType::Data, None, None),
                )
                .map_err(|e| e.to_string())?;
                floor[idx] = data;
            }
            1 => {
                let (data, _) = chip.read_page(addr).map_err(|e| e.to_string())?;
                for (cell, shadow) in data.iter().zip(&floor[idx]) {
                    if cell & !shadow != 0 {
                        return Err(format!("cell at {addr} gained a bit"));
                    }
                }
            }
            _ => {
                chip.erase_block(addr.block).map_err(|e| e.to_string())?;
                for p in 0..geometry.pages_per_block {
                    let i = (addr.block * geometry.pages_per_block + p) as usize;
                    floor[i].fill(0xFF);
                }
            }
        }
    }
    let ledger = chip.ledger();
    if ledger.sim_time_us != ledger.expected_time(chip.timing()) {
        return Err("simulated time diverged from the operation counters".into());
    }
    Ok(())
}

fn selftest_codec(cases: u32) -> Result<(), String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
    for _ in 0..cases {
        let base: Vec<u8> = (0..2048).map(|_| rng.gen()).collect();
        let mut current = base.clone();
        for _ in 0..rng.gen_range(1..30) {
            let at = rng.gen_range(0..2048);
            let len = rng.gen_range(1..=(2048 - at).min(80));
            for b in &mut current[at..at + len] {
                *b = rng.gen();
            }
        }
        let d = crate::diff::Differential::compute(&base, &current, 1, 1);
        let applied = d.apply_to(&base).map_err(|e| e.to_string())?;
        if applied != current {
            return Err("apply(compute(base, current)) != current".into());
        }
        let mut page = vec![0xFF; 2048];
        let enc = d.encode();
        if enc.len() <= 2048 {
            page[..enc.len()].copy_from_slice(&enc);
            let decoded = crate::diff::decode_page(&page).map_err(|e| e.to_string())?;
            if decoded.len() != 1 || decoded[0] != d {
                return Err("decode(encode(d)) != d".into());
            }
        }
    }
    Ok(())
}

fn selftest_oracle(ops: u64) -> Result<(), String> {
    for kind in [DriverKind::Pdl256, DriverKind::Pdl2k, DriverKind::Opu, DriverKind::Ipl18] {
        let cfg = CellConfig {
            n_blocks: 32,
            timing: TimingProfile::standard(),
            workload: WorkloadParams {
                n_updates_till_write: 1,
                pct_changed: 2.0,
                pct_update_ops: 80.0,
                db_bytes: 800 * 2048,
                page_bytes: 2048,
                seed: 21,
            },
            warmup: WarmupSpec { gc_per_block: 0.25, max_ops: 2_000 },
            measure_ops: ops,
            audit: true,
            warmup_workload: None,
        };
        run_cell(kind, &cfg).map_err(|e| format!("{}: {e}", kind.label()))?;
    }
    Ok(())
}

fn selftest_recovery(scale: u32) -> Result<(), String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
    let geometry = FlashGeometry::desk(16);
    let timing = TimingProfile::standard();
    let mut chip = FlashChip::new(geometry, timing).map_err(|e| e.to_string())?;
    chip.enable_journal();
    let mut driver = PdlDriver::new(chip, PdlConfig::whole_page());
    let n_pids = 64u32;
    let mut shadow = Vec::new();
    for pid in 0..n_pids {
        let page: Vec<u8> = (0..2048).map(|_| rng.gen()).collect();
        driver.write_logical(pid, &page).map_err(|e| e.to_string())?;
        shadow.push(page);
    }
    for i in 0..120 {
        let pid = rng.gen_range(0..n_pids);
        let mut page = shadow[pid as usize].clone();
        let at = rng.gen_range(0..2000);
        page[at] ^= 0xFF;
        driver.write_logical(pid, &page).map_err(|e| e.to_string())?;
        shadow[pid as usize] = page;
        if i % 25 == 24 {
            driver.write_through().map_err(|e| e.to_string())?;
        }
    }
    driver.write_through().map_err(|e| e.to_string())?;
    let chip = driver.into_chip();
    let journal = chip.journal();
    let step = (8 / scale).max(1) as usize;
    for cut in (0..=journal.len()).step_by(step) {
        let mut crashed =
            inject_crash(geometry, timing, journal, CrashPlan::new(cut)).map_err(|e| e.to_string())?;
        let state = recover(&mut crashed).map_err(|e| e.to_string())?;
        let again = recover(&mut crashed).map_err(|e| e.to_string())?;
        if again.mutations != 0 {
            return Err(format!("crash point {cut}: recovery is not idempotent"));
        }
        if again.tables != state.tables {
            return Err(format!("crash point {cut}: recovery is not deterministic"));
        }
        for &pid in state.tables.mapping.keys() {
            materialize(&mut crashed, &state.tables, pid).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn selftest_scan_cost() -> Result<(), String> {
    let timing = TimingProfile::standard();
    let gib = FlashGeometry::desk(8192);
    let cost = scan_cost(&gib, &timing);
    let sixty_s = 60_000_000u64;
    if cost.abs_diff(sixty_s) > sixty_s / 10 {
        return Err(format!("1-GiB scan is {cost} us, expected within 10% of 60 s"));
    }
    Ok(())
}
