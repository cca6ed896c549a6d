use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};

use evslab::binning::{bin_events, ColumnDeltas};
use evslab::config::LabConfig;
use evslab::control::{Controller, LearnedPolicy, Policy};
use evslab::governor::GovernedPolicy;
use evslab::harness::{
    hotswap_eval, matched_rate_reduction, run_live, summarize, sweep_rate_quality, LiveRun, Pchip, PolicySpec, SweepRow,
};
use evslab::io;
use evslab::recon::{NaiveIntegrator, ReconNet, Reconstruct, RecurrentReconstructor};
use evslab::scene::{gen_motion_sequence, load_brightness, patterns, scale_illuminance, IlluminanceSequence};
use evslab::sensor::{constant_schedule, seeded_stream, simulate, SimTiming};
use evslab::trainer::{alternate_train, Sample};
use evslab::{Error, Result, Tensor, BIN_RATE_HZ, CADENCE};

#[derive(Parser)]
#[command(name = "evslab", version, about = "Closed-loop threshold control of simulated event cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Edge,
    Texture,
    Banded,
}

#[derive(Subcommand)]
enum Command {
    /// Generate illuminance sequences from still images or procedural patterns.
    SceneGen {
        /// Directory of grayscale images; procedural scenes when omitted.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "edge")]
        pattern: Pattern,
        /// Number of procedural scenes.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frames at the simulation rate.
        #[arg(long)]
        th: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Frame size as HxW.
        #[arg(long)]
        hw: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate the sensor on a scene under a column schedule.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// One row of threshold indices per control window; all zeros when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// `.csv` for text, anything else binary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin an event stream into D and C tensors.
    Bin {
        #[arg(long)]
        events: PathBuf,
        /// Number of bins.
        #[arg(long)]
        tl: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sensor size for CSV streams, HxW.
        #[arg(long)]
        hw: Option<String>,
    },
    /// Alternating training of controller and reconstructor.
    Train {
        /// Directory of scene files; the configured toy corpus when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one policy in closed loop with the sensor.
    ControlRun {
        /// fixed:J, random[:ALPHA], prop:RATE, learned[:PATH] or governed:ALPHA.
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct frames from events and their column schedule.
    Recon {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Reconstructor weights, or `naive` for plain integration.
        #[arg(long)]
        weights: String,
        #[arg(long)]
        out_frames: PathBuf,
        /// Number of bins; inferred from the schedule when omitted.
        #[arg(long)]
        tl: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        hw: Option<String>,
    },
    /// Track a target event rate with the learned controller.
    Govern {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        /// Target mean count per pixel per bin.
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate/quality sweep over the configured policies.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of scene files; the configured toy corpus when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        recon: Option<PathBuf>,
        /// A second reconstructor for the hot-swap table.
        #[arg(long)]
        recon_alt: Option<PathBuf>,
        /// Seed of the toy evaluation scenes.
        #[arg(long, default_value_t = 1)]
        scene_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trade-off curves and matched-rate reductions from a sweep table.
    Report {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_hw(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| Error::Config(format!("expected HxW, got `{s}`")))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("expected HxW, got `{s}`")));
    Ok((n(h)?, n(w)?))
}

fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "evsf"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no .evsf scenes in {}", dir.display())));
    }
    Ok(files)
}

fn load_samples(cfg: &LabConfig, data: Option<&Path>, toy_seed: u64) -> Result<Vec<Sample>> {
    match data {
        Some(dir) => scene_files(dir)?
            .iter()
            .map(|p| Sample::simulate(&io::read_scene(p)?, &cfg.sensor, cfg.scene.subsample))
            .collect(),
        None => {
            let toy = evslab::harness::ToyCorpus { thresholds: cfg.sensor.thresholds.clone(), ..cfg.toy.clone() };
            toy.generate(toy_seed)
        }
    }
}

fn scene_gen(
    images: Option<&Path>,
    pattern: Pattern,
    count: usize,
    out: &Path,
    seed: u64,
    th: Option<usize>,
    q: Option<usize>,
    hw: Option<&str>,
    cfg: &LabConfig,
) -> Result<()> {
    let mut sc = cfg.scene.clone();
    if let Some(th) = th {
        sc.high_rate_len = th;
    }
    if let Some(q) = q {
        sc.subsample = q;
    }
    if let Some(hw) = hw {
        (sc.height, sc.width) = parse_hw(hw)?;
    }
    sc.validate()?;
    std::fs::create_dir_all(out)?;
    let brightness: Vec<Option<Tensor>> = match images {
        Some(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
            files.sort();
            files.iter().map(|p| load_brightness(p, sc.height, sc.width).map(Some)).collect::<Result<_>>()?
        }
        None => vec![None; count],
    };
    for (i, b) in brightness.into_iter().enumerate() {
        let mut rng = seeded_stream(seed, i as u64);
        let seq = match b {
            Some(b) => gen_motion_sequence(&scale_illuminance(&b, sc.l_min, sc.l_rng)?, &sc, &mut rng)?,
            None => {
                let (h, w, n) = (sc.height, sc.width, sc.high_rate_len);
                let frames = match pattern {
                    Pattern::Edge => patterns::moving_edge(h, w, n, &mut rng),
                    Pattern::Texture => {
                        let v = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                        patterns::drifting_texture(h, w, n, v, &mut rng)
                    }
                    Pattern::Banded => patterns::banded_texture(h, w, n, &cfg.toy.amplitudes, cfg.toy.speed, &mut rng).0,
                };
                let frames = frames.iter().map(|f| scale_illuminance(f, sc.l_min, sc.l_rng)).collect::<Result<_>>()?;
                IlluminanceSequence { frames, l_min: sc.l_min, l_rng: sc.l_rng }
            }
        };
        io::write_scene(&out.join(format!("scene_{i:03}.evsf")), &seq)?;
    }
    Ok(())
}

fn simulate_cmd(scene: &Path, cfg: &LabConfig, schedule: Option<&Path>, out: &Path) -> Result<()> {
    let seq = io::read_scene(scene)?;
    let (h, w) = seq.dims().ok_or_else(|| Error::Config("empty scene".into()))?;
    let timing = SimTiming::for_subsample(cfg.scene.subsample);
    let sched = match schedule {
        Some(p) => io::read_schedule(p)?,
        None => constant_schedule(timing.windows_for(seq.len()), w, 0),
    };
    let events = simulate(&seq.frames, &sched, &cfg.sensor, timing)?;
    io::write_events(out, w, h, &events)
}

fn read_sized_events(path: &Path, hw: Option<&str>) -> Result<(usize, usize, Vec<evslab::sensor::Event>)> {
    let (size, events) = io::read_events(path)?;
    let (w, h) = match (size, hw) {
        (_, Some(s)) => {
            let (h, w) = parse_hw(s)?;
            (w, h)
        }
        (Some(wh), None) => wh,
        (None, None) => return Err(Error::Config("CSV events need --hw".into())),
    };
    Ok((w, h, events))
}

fn deltas_for(cfg: &LabConfig, schedule: Option<&[Vec<usize>]>, bins: usize, width: usize) -> Result<ColumnDeltas> {
    match schedule {
        Some(s) => ColumnDeltas::from_schedule(s, &cfg.sensor.thresholds, bins),
        None => Ok(ColumnDeltas::constant(bins, width, cfg.sensor.thresholds[0])),
    }
}

fn bin_cmd(events: &Path, tl: usize, out: &Path, schedule: Option<&Path>, cfg: &LabConfig, hw: Option<&str>) -> Result<()> {
    let (w, h, events) = read_sized_events(events, hw)?;
    let sched = schedule.map(io::read_schedule).transpose()?;
    let deltas = deltas_for(cfg, sched.as_deref(), tl, w)?;
    let b = bin_events(&events, h, 1.0 / BIN_RATE_HZ, deltas)?;
    io::write_binned(out, &b)
}

#[derive(Serialize)]
struct TrainLogLine {
    iter: usize,
    image_loss: f64,
    rate_loss: f64,
    lambda: f64,
    lr: f64,
    seed: u64,
    config_hash: String,
}

fn train_cmd(data: Option<&Path>, cfg: &LabConfig, out: &Path) -> Result<()> {
    let samples = load_samples(cfg, data, cfg.train.seed)?;
    let controller = Controller::new(cfg.controller.clone())?;
    let recon = ReconNet::new(cfg.recon.clone())?;
    std::fs::create_dir_all(out)?;
    let result = alternate_train(&samples, &cfg.train, controller, recon, Some(&out.join("checkpoints")))?;
    let hash = cfg.hash();
    let rows: Vec<TrainLogLine> = result
        .log
        .iter()
        .map(|r| TrainLogLine {
            iter: r.iter,
            image_loss: r.image_loss,
            rate_loss: r.rate_loss,
            lambda: r.lambda,
            lr: r.lr,
            seed: cfg.train.seed,
            config_hash: hash.clone(),
        })
        .collect();
    io::write_csv(&out.join("train_log.csv"), &rows)?;
    io::save_controller(&out.join("controller.bin"), &result.controller)?;
    io::save_recon(&out.join("recon.bin"), &result.recon)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Per-bin table: rate, optional λ*, number of columns on every threshold.
fn write_bin_table(path: &Path, run: &LiveRun, lambdas: Option<&[f64]>, nc: usize, seed: u64, hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format { path: path.into(), message: e.to_string() })?;
    let mut header = vec!["bin".to_string(), "rate".into()];
    if lambdas.is_some() {
        header.push("lambda_star".into());
    }
    header.extend((0..nc).map(|j| format!("columns_{j}")));
    header.extend(["seed".into(), "config_hash".into()]);
    let mut rows = vec![header];
    for (t, rate) in run.rates.iter().enumerate() {
        let mut row = vec![t.to_string(), rate.to_string()];
        if let Some(l) = lambdas {
            row.push(l[t / CADENCE].to_string());
        }
        let sel = run.selection(t);
        row.extend((0..nc).map(|j| sel.iter().filter(|&&s| s == j).count().to_string()));
        row.extend([seed.to_string(), hash.to_string()]);
        rows.push(row);
    }
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Format { path: path.into(), message: e.to_string() })?;
    }
    w.flush()?;
    Ok(())
}

fn write_frames(dir: &Path, frames: &[Tensor]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, f) in frames.iter().enumerate() {
        io::write_pgm(&dir.join(format!("frame_{t:04}.pgm")), f)?;
    }
    Ok(())
}

fn control_run(policy: &str, lambda: f64, scene: &Path, controller: Option<&Path>, cfg: &LabConfig, seed: u64, out: &Path) -> Result<()> {
    let nc = cfg.sensor.num_thresholds();
    let mut pol: Box<dyn Policy> = match policy.split_once(':') {
        // `learned:PATH` names the weights; `learned:0.3` is a λ
        Some(("learned", arg)) if arg.parse::<f64>().is_err() => Box::new(LearnedPolicy::new(io::load_controller(Path::new(arg))?, lambda)),
        None if policy == "learned" => {
            let path = controller.ok_or_else(|| Error::Config("learned policy needs --controller".into()))?;
            Box::new(LearnedPolicy::new(io::load_controller(path)?, lambda))
        }
        _ => {
            let spec: PolicySpec = policy.parse()?;
            let ctrl = if spec.needs_controller() {
                Some(io::load_controller(controller.ok_or_else(|| Error::Config(format!("policy `{policy}` needs --controller")))?)?)
            } else {
                None
            };
            spec.build(nc, ctrl.as_ref())?
        }
    };
    let seq = io::read_scene(scene)?;
    let (h, w) = seq.dims().ok_or_else(|| Error::Config("empty scene".into()))?;
    let run = run_live(&seq, &cfg.sensor, cfg.scene.subsample, pol.as_mut(), seed)?;
    std::fs::create_dir_all(out)?;
    io::write_schedule(&out.join("schedule.csv"), &run.schedule)?;
    io::write_events(&out.join("events.bin"), w, h, &run.events)?;
    io::write_binned(&out.join("binned.evsf"), &run.binned)?;
    write_bin_table(&out.join("bins.csv"), &run, None, nc, seed, &cfg.hash())
}

fn recon_cmd(events: &Path, mask: &Path, weights: &str, out: &Path, tl: Option<usize>, cfg: &LabConfig, hw: Option<&str>) -> Result<()> {
    let (w, h, events) = read_sized_events(events, hw)?;
    let schedule = io::read_schedule(mask)?;
    let bins = tl.unwrap_or(schedule.len() * CADENCE);
    let b = bin_events(&events, h, 1.0 / BIN_RATE_HZ, deltas_for(cfg, Some(&schedule), bins, w)?)?;
    let nc = cfg.sensor.num_thresholds();
    let mut recon: Box<dyn Reconstruct> = if weights == "naive" {
        Box::new(NaiveIntegrator::default())
    } else {
        Box::new(RecurrentReconstructor::new(io::load_recon(Path::new(weights))?))
    };
    let mut frames = Vec::with_capacity(bins);
    for t in 0..bins {
        let sel = schedule
            .get(t / CADENCE)
            .ok_or_else(|| Error::Config(format!("schedule has no window for bin {t}")))?;
        frames.push(recon.step(&b.d_frame(t), &evslab::control::one_hot(sel, nc))?);
    }
    write_frames(out, &frames)
}

fn govern_cmd(scene: &Path, controller: &Path, recon: &Path, alpha: f64, cfg: &LabConfig, seed: u64, out: &Path) -> Result<()> {
    let ctrl = io::load_controller(controller)?;
    let net = io::load_recon(recon)?;
    let nc = cfg.sensor.num_thresholds();
    let mut pol = GovernedPolicy::new(LearnedPolicy::new(ctrl, 0.0), alpha)?;
    let seq = io::read_scene(scene)?;
    let run = run_live(&seq, &cfg.sensor, cfg.scene.subsample, &mut pol, seed)?;
    std::fs::create_dir_all(out)?;
    write_bin_table(&out.join("govern.csv"), &run, Some(&pol.lambda_log), nc, seed, &cfg.hash())?;
    io::write_schedule(&out.join("schedule.csv"), &run.schedule)?;
    let frames = run.reconstruct(&mut RecurrentReconstructor::new(net), nc)?;
    write_frames(&out.join("frames"), &frames)
}

#[derive(Serialize, Deserialize)]
struct HotswapLine {
    name: String,
    lambda: String,
    rate: f64,
    ssim: f64,
    psnr: f64,
    l1: f64,
    seed: u64,
    config_hash: String,
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    cfg: &LabConfig,
    data: Option<&Path>,
    controller: Option<&Path>,
    recon: Option<&Path>,
    recon_alt: Option<&Path>,
    scene_seed: u64,
    out: &Path,
) -> Result<()> {
    let samples = load_samples(cfg, data, scene_seed)?;
    let ctrl = controller.map(io::load_controller).transpose()?;
    let net = recon.map(io::load_recon).transpose()?;
    let mut rec: Box<dyn Reconstruct> = match &net {
        Some(n) => Box::new(RecurrentReconstructor::new(n.clone())),
        None => Box::new(NaiveIntegrator::default()),
    };
    let hash = cfg.hash();
    let mut rows = sweep_rate_quality(&cfg.experiment, &samples, ctrl.as_ref(), rec.as_mut())?;
    rows.iter_mut().for_each(|r| r.config_hash = hash.clone());
    std::fs::create_dir_all(out)?;
    io::write_csv(&out.join("sweep.csv"), &rows)?;
    if let (Some(c), Some(a), Some(b)) = (&ctrl, &net, recon_alt) {
        let alt = io::load_recon(b)?;
        let seed = cfg.experiment.seeds[0];
        let table = hotswap_eval(c, &[("joint", a), ("alt", &alt)], &samples, cfg.experiment.hotswap_match, seed)?;
        let lines: Vec<HotswapLine> = table
            .into_iter()
            .map(|r| HotswapLine {
                name: r.name,
                lambda: r.lambda.map_or_else(String::new, |l| l.to_string()),
                rate: r.rate,
                ssim: r.ssim,
                psnr: r.psnr,
                l1: r.l1,
                seed,
                config_hash: hash.clone(),
            })
            .collect();
        io::write_csv(&out.join("hotswap.csv"), &lines)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveLine {
    family: String,
    norm_rate: f64,
    image_loss: f64,
    config_hash: String,
}

#[derive(Serialize)]
struct ReductionLine {
    reference: String,
    norm_rate: f64,
    image_loss: f64,
    family: String,
    /// Percent, empty when unattainable.
    reduction: String,
    config_hash: String,
}

fn family(policy: &str) -> &str {
    policy.split_once(':').map_or(policy, |(k, _)| k)
}

fn report_cmd(sweep: &Path, out: &Path) -> Result<()> {
    let rows: Vec<SweepRow> = io::read_csv(sweep)?;
    let hash = rows.first().map(|r| r.config_hash.clone()).unwrap_or_default();
    let summary = summarize(&rows);
    let mut families: Vec<&str> = Vec::new();
    for (p, _, _) in &summary {
        if !families.contains(&family(p)) {
            families.push(family(p));
        }
    }
    let points = |fam: &str| -> Vec<(f64, f64)> {
        summary.iter().filter(|(p, _, _)| family(p) == fam).map(|(_, r, q)| (*r, *q)).collect()
    };
    let reference: Vec<(String, f64, f64)> = summary.iter().filter(|(p, _, _)| family(p) == "fixed").cloned().collect();
    let mut curves = Vec::new();
    let mut reductions = Vec::new();
    for fam in families {
        let Ok(curve) = Pchip::new(&points(fam)) else { continue };
        curves.extend(curve.sample(50).into_iter().map(|(r, q)| CurveLine {
            family: fam.to_string(),
            norm_rate: r,
            image_loss: q,
            config_hash: hash.clone(),
        }));
        if fam == "fixed" {
            continue;
        }
        let refs: Vec<(f64, f64)> = reference.iter().map(|(_, r, q)| (*r, *q)).collect();
        for ((name, r, q), red) in reference.iter().zip(matched_rate_reduction(&refs, &curve)) {
            reductions.push(ReductionLine {
                reference: name.clone(),
                norm_rate: *r,
                image_loss: *q,
                family: fam.to_string(),
                reduction: red.map_or_else(String::new, |v| (100.0 * v).to_string()),
                config_hash: hash.clone(),
            });
        }
    }
    std::fs::create_dir_all(out)?;
    io::write_csv(&out.join("curves.csv"), &curves)?;
    io::write_csv(&out.join("reduction.csv"), &reductions)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = |p: &Option<PathBuf>| LabConfig::load_or_default(p.as_deref());
    match cli.command {
        Command::SceneGen { images, pattern, count, out, seed, th, q, hw, config } => {
            scene_gen(images.as_deref(), pattern, count, &out, seed, th, q, hw.as_deref(), &cfg(&config)?)
        }
        Command::Simulate { scene, config, schedule, out } => simulate_cmd(&scene, &cfg(&config)?, schedule.as_deref(), &out),
        Command::Bin { events, tl, out, schedule, config, hw } => bin_cmd(&events, tl, &out, schedule.as_deref(), &cfg(&config)?, hw.as_deref()),
        Command::Train { data, config, out } => train_cmd(data.as_deref(), &cfg(&config)?, &out),
        Command::ControlRun { policy, lambda, scene, controller, config, seed, out } => {
            control_run(&policy, lambda, &scene, controller.as_deref(), &cfg(&config)?, seed, &out)
        }
        Command::Recon { events, mask, weights, out_frames, tl, config, hw } => {
            recon_cmd(&events, &mask, &weights, &out_frames, tl, &cfg(&config)?, hw.as_deref())
        }
        Command::Govern { scene, controller, recon, alpha, config, seed, out } => {
            govern_cmd(&scene, &controller, &recon, alpha, &cfg(&config)?, seed, &out)
        }
        Command::Sweep { config, data, controller, recon, recon_alt, scene_seed, out } => sweep_cmd(
            &cfg(&config)?,
            data.as_deref(),
            controller.as_deref(),
            recon.as_deref(),
            recon_alt.as_deref(),
            scene_seed,
            &out,
        ),
        Command::Report { sweep, out } => report_cmd(&sweep, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
