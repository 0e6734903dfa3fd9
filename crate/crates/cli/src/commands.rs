//! Subcommand implementations over an experiment directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use grokscope::checkpoint::CheckpointStore;
use grokscope::config::RunConfig;
use grokscope::curvature::{
    condition_track, cosine_track, pca_trajectory, read_pca_csv, write_curvature_csv, write_pca_csv,
};
use grokscope::harness::{
    detect_phases, fit_power_law, grid, read_metrics_file, read_sweep_csv, stop_rule, sweep, train,
    write_metrics_csv, write_sweep_csv, PhaseMarks, Prepared, TrainTrace,
};
use grokscope::intrinsic_dim::{id_battery, layer_id_track, write_battery_csv, write_id_csv, ManifoldKind, ManifoldSpec};
use grokscope::landscape::{
    filter_normalize, make_direction, read_slice_csv, slice_1d, slice_2d, write_slice_csv, DirectionAux,
    DirectionKind, GridSpec,
};
use grokscope::objective::ModelObjective;
use grokscope::spectral::{window_signature, write_spectral_csv};
use grokscope::testfn::{
    default_race_optimizers, race, write_contour_csv, write_race_csv, TestFnKind, TestFnSpec, RASTRIGIN_START,
    ROSENBROCK_START,
};
use serde::{Deserialize, Serialize};

use crate::plot::{Axis, Heatmap, LineChart, Scale, Scatter, Series, PALETTE};
use crate::Failure;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ERROR_FILE: &str = "error.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SLICE_DIR: &str = "slices";
pub const PLOT_DIR: &str = "plots";

/// Files and directories a run or sweep may create; `--force` clears only these.
const ARTIFACTS: [&str; 17] = [
    CONFIG_FILE,
    METRICS_FILE,
    ERROR_FILE,
    CHECKPOINT_DIR,
    SLICE_DIR,
    PLOT_DIR,
    "phases.json",
    "spectral.csv",
    "curvature.csv",
    "pca.csv",
    "cosine.csv",
    "id.csv",
    "sweep.csv",
    "race.csv",
    "contour.csv",
    "race_summary.json",
    "id_battery.csv",
];

pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Config)?;
    RunConfig::from_json(&text).map_err(|e| Failure::Config(e.into()))
}

/// Makes `out` ready for fresh output, refusing to reuse a non-empty
/// directory unless `force` is set.
pub fn prepare_out(out: &Path, force: bool) -> Result<(), Failure> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))
            .map_err(Failure::Runtime)?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Failure::Config(anyhow!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        for name in ARTIFACTS {
            let p = out.join(name);
            let res = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else if p.exists() {
                fs::remove_file(&p)
            } else {
                Ok(())
            };
            res.with_context(|| format!("removing {}", p.display())).map_err(Failure::Runtime)?;
        }
    }
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> grokscope::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn describe_marks(m: &PhaseMarks) -> String {
    let f = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
    format!("t1={} t2={} t3={} t4={}", f(m.t1), f(m.t2), f(m.t3), f(m.t4))
}

#[derive(Serialize)]
struct ErrorRecord {
    step: usize,
    error: String,
}

pub fn cmd_train(
    config_path: &Path,
    out: &Path,
    force: bool,
    seed: Option<u64>,
    r: Option<f64>,
) -> Result<(), Failure> {
    let mut config = load_config(config_path)?;
    if let Some(s) = seed {
        config.task.seed = s;
    }
    if let Some(r) = r {
        config.task.r = r;
    }
    config.validate().map_err(|e| Failure::Config(e.into()))?;
    prepare_out(out, force)?;
    write_file(&out.join(CONFIG_FILE), config.to_json()).map_err(Failure::Runtime)?;
    let prep = Prepared::new(&config).map_err(|e| Failure::Config(e.into()))?;
    let store = CheckpointStore::create_dir(out.join(CHECKPOINT_DIR), prep.model.layout().clone())
        .map_err(|e| Failure::Runtime(e.into()))?;
    drop(prep);
    match train(&config, store) {
        Ok(outcome) => {
            let bytes = csv_bytes(|b| write_metrics_csv(b, &outcome.trace)).map_err(Failure::Runtime)?;
            write_file(&out.join(METRICS_FILE), bytes).map_err(Failure::Runtime)?;
            let phases = serde_json::to_string_pretty(&outcome.marks).map_err(|e| Failure::Runtime(e.into()))?;
            write_file(&out.join("phases.json"), phases).map_err(Failure::Runtime)?;
            println!("{}", describe_marks(&outcome.marks));
            Ok(())
        }
        Err(failure) => {
            let bytes = csv_bytes(|b| write_metrics_csv(b, &failure.trace)).map_err(Failure::Runtime)?;
            write_file(&out.join(METRICS_FILE), bytes).map_err(Failure::Runtime)?;
            let rec = ErrorRecord {
                step: failure.step,
                error: failure.source.to_string(),
            };
            let json = serde_json::to_string_pretty(&rec).map_err(|e| Failure::Runtime(e.into()))?;
            write_file(&out.join(ERROR_FILE), json).map_err(Failure::Runtime)?;
            Err(Failure::Runtime(failure.into()))
        }
    }
}

pub struct SweepArgs {
    pub lrs: Option<Vec<f64>>,
    pub wds: Option<Vec<f64>>,
    pub rs: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub workers: usize,
}

pub fn cmd_sweep(config_path: &Path, out: &Path, force: bool, args: SweepArgs) -> Result<(), Failure> {
    let base = load_config(config_path)?;
    let cells = grid(
        &args.lrs.unwrap_or_else(|| vec![base.optimizer.lr]),
        &args.wds.unwrap_or_else(|| vec![base.optimizer.weight_decay]),
        &args.rs.unwrap_or_else(|| vec![base.task.r]),
        &args.seeds.unwrap_or_else(|| vec![base.task.seed]),
    );
    for cell in &cells {
        cell.apply(&base).validate().map_err(|e| Failure::Config(e.into()))?;
    }
    prepare_out(out, force)?;
    write_file(&out.join(CONFIG_FILE), base.to_json()).map_err(Failure::Runtime)?;
    let rows = sweep(&base, &cells, args.workers).map_err(|e| Failure::Runtime(e.into()))?;
    let bytes = csv_bytes(|b| write_sweep_csv(b, &rows)).map_err(Failure::Runtime)?;
    write_file(&out.join("sweep.csv"), bytes).map_err(Failure::Runtime)?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    println!("{} cells, {failed} failed", rows.len());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Analysis {
    Spectral,
    Landscape,
    Curvature,
    Pca,
    Id,
    Phases,
    FitT4,
}

#[derive(Default)]
pub struct AnalyzeArgs {
    pub window: Option<(usize, usize)>,
    pub cutoff: Option<f64>,
    pub alphas: Option<GridSpec>,
}

/// A finished (or partial) run directory.
struct RunDir {
    path: PathBuf,
    config: RunConfig,
}

impl RunDir {
    fn open(path: &Path) -> Result<Self, Failure> {
        let cfg_path = path.join(CONFIG_FILE);
        if !cfg_path.exists() {
            return Err(Failure::Runtime(anyhow!("{} not found", cfg_path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            config: load_config(&cfg_path)?,
        })
    }

    fn trace(&self) -> anyhow::Result<TrainTrace> {
        let p = self.path.join(METRICS_FILE);
        if !p.exists() {
            bail!("{} not found; run `grokscope train` first", p.display());
        }
        Ok(read_metrics_file(&p)?)
    }

    fn store(&self) -> anyhow::Result<CheckpointStore> {
        let dir = self.path.join(CHECKPOINT_DIR);
        if !dir.exists() {
            bail!("{} not found; run `grokscope train` first", dir.display());
        }
        Ok(CheckpointStore::open_dir(dir)?)
    }

    /// Checkpoints at every multiple of `stride`, which must all be present.
    fn strided(&self, store: &CheckpointStore, stride: usize) -> anyhow::Result<Vec<(usize, Vec<f64>)>> {
        let have = store.steps();
        let wanted: Vec<usize> = have.iter().copied().filter(|s| s % stride == 0).collect();
        let expected: Vec<usize> = (0..=self.config.budget).step_by(stride).collect();
        let missing: Vec<usize> = expected.iter().copied().filter(|s| !have.contains(s)).collect();
        if !missing.is_empty() {
            bail!(
                "missing checkpoints at steps {:?}; this analysis needs every multiple of {stride} up to {} \
                 (train with checkpoint_stride dividing {stride})",
                missing,
                self.config.budget
            );
        }
        wanted.into_iter().map(|s| Ok((s, store.load(s)?.values))).collect()
    }
}

pub fn cmd_analyze(dir: &Path, which: Analysis, args: &AnalyzeArgs) -> Result<(), Failure> {
    if which == Analysis::FitT4 {
        return fit_t4(dir).map_err(Failure::Runtime);
    }
    let run = RunDir::open(dir)?;
    let mut analysis = run.config.analysis.clone();
    if let Some(w) = args.window {
        analysis.spectral_windows = vec![w];
    }
    if let Some(c) = args.cutoff {
        analysis.spectral_cutoff = c;
    }
    if let Some(a) = args.alphas {
        analysis.slice_alphas = a;
    }
    analysis.validate().map_err(|e| Failure::Config(e.into()))?;
    let res = match which {
        Analysis::Spectral => spectral(&run, &analysis),
        Analysis::Phases => phases(&run),
        Analysis::Landscape => landscape(&run, &analysis),
        Analysis::Curvature => curvature(&run, &analysis),
        Analysis::Pca => pca(&run, &analysis),
        Analysis::Id => intrinsic(&run, &analysis),
        Analysis::FitT4 => unreachable!("handled above"),
    };
    res.map_err(Failure::Runtime)
}

fn spectral(run: &RunDir, a: &grokscope::config::AnalysisConfig) -> anyhow::Result<()> {
    let loss = run.trace()?.train_loss();
    let rows = a
        .spectral_windows
        .iter()
        .map(|&(s, e)| window_signature(&loss, s..e, a.spectral_cutoff, a.spectral_log))
        .collect::<grokscope::Result<Vec<_>>>()?;
    write_file(&run.path.join("spectral.csv"), csv_bytes(|b| write_spectral_csv(b, &rows))?)?;
    for r in &rows {
        println!("window {}..{}: activity {}", r.window.0, r.window.1, r.activity);
    }
    Ok(())
}

fn marks_of(run: &RunDir, trace: &TrainTrace) -> anyhow::Result<PhaseMarks> {
    let prep = Prepared::new(&run.config)?;
    Ok(detect_phases(trace, &prep.thresholds()))
}

fn phases(run: &RunDir) -> anyhow::Result<()> {
    let marks = marks_of(run, &run.trace()?)?;
    write_file(&run.path.join("phases.json"), serde_json::to_string_pretty(&marks)?)?;
    println!("{}", describe_marks(&marks));
    Ok(())
}

fn load_step(store: &CheckpointStore, step: usize, why: &str) -> anyhow::Result<Vec<f64>> {
    store
        .load(step)
        .map(|p| p.values)
        .with_context(|| format!("{why} needs the checkpoint of step {step}"))
}

fn landscape(run: &RunDir, a: &grokscope::config::AnalysisConfig) -> anyhow::Result<()> {
    let store = run.store()?;
    let prep = Prepared::new(&run.config)?;
    let obj = ModelObjective::new(&prep.model, &prep.train, &prep.val);
    let anchors = if a.slice_anchors.is_empty() {
        let marks = detect_phases(&run.trace()?, &prep.thresholds());
        vec![marks.t2.unwrap_or(0)]
    } else {
        a.slice_anchors.clone()
    };
    let alphas = a.slice_alphas.points();
    let final_step = run.config.budget;
    for &anchor in &anchors {
        let theta = load_step(&store, anchor, "the slice anchor")?;
        for &kind in &a.slice_kinds {
            let target;
            let aux = match kind {
                DirectionKind::ToOptimum => {
                    target = load_step(&store, final_step, "a to_optimum direction")?;
                    DirectionAux::Target(&target)
                }
                DirectionKind::NextStep => {
                    target = load_step(&store, anchor + 1, "a next_step direction (train with checkpoint_stride 1)")?;
                    DirectionAux::Target(&target)
                }
                DirectionKind::ToInit => {
                    target = load_step(&store, 0, "a to_init direction")?;
                    DirectionAux::Target(&target)
                }
                DirectionKind::Random => DirectionAux::Seed(a.slice_seed),
            };
            let raw = make_direction(kind, &theta, anchor, aux)?;
            let dir = filter_normalize(&raw, &theta, store.layout(), a.zero_filter_policy)?;
            let s = slice_1d(&obj, &theta, anchor, &dir, &alphas)?;
            let name = format!("slice_{}_{anchor}.csv", kind.name());
            write_file(&run.path.join(SLICE_DIR).join(name), csv_bytes(|b| write_slice_csv(b, &s))?)?;
            if a.slice_2d {
                let raw2 = make_direction(DirectionKind::Random, &theta, anchor, DirectionAux::Seed(a.slice_seed + 1))?;
                let dir2 = filter_normalize(&raw2, &theta, store.layout(), a.zero_filter_policy)?;
                let g = a.slice_grid_2d.points();
                let s2 = slice_2d(&obj, &theta, anchor, &dir, &dir2, &g, &g)?;
                let name = format!("slice2d_{}_{anchor}.csv", kind.name());
                write_file(&run.path.join(SLICE_DIR).join(name), csv_bytes(|b| write_slice_csv(b, &s2))?)?;
            }
        }
    }
    println!("{} slices written to {}", anchors.len() * a.slice_kinds.len(), run.path.join(SLICE_DIR).display());
    Ok(())
}

fn curvature(run: &RunDir, a: &grokscope::config::AnalysisConfig) -> anyhow::Result<()> {
    let store = run.store()?;
    let ckpts = run.strided(&store, a.curvature_stride)?;
    let prep = Prepared::new(&run.config)?;
    let obj = ModelObjective::new(&prep.model, &prep.train, &prep.val);
    let rows = condition_track(&obj, &ckpts, &a.power_iteration)?;
    write_file(&run.path.join("curvature.csv"), csv_bytes(|b| write_curvature_csv(b, &rows))?)?;
    let unconverged = rows.iter().filter(|r| !(r.converged_max && r.converged_min)).count();
    println!("{} checkpoints, {unconverged} without convergence", rows.len());
    Ok(())
}

fn pca(run: &RunDir, a: &grokscope::config::AnalysisConfig) -> anyhow::Result<()> {
    let store = run.store()?;
    let ckpts = store
        .steps()
        .into_iter()
        .map(|s| Ok((s, store.load(s)?.values)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let p = pca_trajectory(&ckpts, a.pca_max_checkpoints)?;
    write_file(&run.path.join("pca.csv"), csv_bytes(|b| write_pca_csv(b, &p))?)?;
    let cos = cosine_track(&ckpts)?;
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["step", "cos_next", "cos_init"])?;
    for c in &cos {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        wr.write_record([c.step.to_string(), o(c.cos_next), o(c.cos_init)])?;
    }
    write_file(&run.path.join("cosine.csv"), wr.into_inner().map_err(|e| anyhow!("{e}"))?)?;
    println!("top-2 explained variance {:.4}", p.explained_top2());
    Ok(())
}

fn intrinsic(run: &RunDir, a: &grokscope::config::AnalysisConfig) -> anyhow::Result<()> {
    let store = run.store()?;
    let ckpts = run.strided(&store, a.id_stride)?;
    let prep = Prepared::new(&run.config)?;
    let mut rows = layer_id_track(&prep.model, &ckpts, &prep.train, "train", &a.id_layers, a.id_method, a.id_k)?;
    rows.extend(layer_id_track(&prep.model, &ckpts, &prep.val, "val", &a.id_layers, a.id_method, a.id_k)?);
    write_file(&run.path.join("id.csv"), csv_bytes(|b| write_id_csv(b, &rows))?)?;
    println!("{} estimates", rows.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PowerLawRecord {
    a: f64,
    gamma: f64,
    b: f64,
    residual_rms: f64,
    gamma_identified: bool,
    points: Vec<(f64, f64)>,
    skipped: Vec<String>,
}

/// Fits `t4(r)` over every run directory directly under `dir`.
fn fit_t4(dir: &Path) -> anyhow::Result<()> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONFIG_FILE).exists())
        .collect();
    subdirs.sort();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for sub in &subdirs {
        let run = RunDir::open(sub).map_err(|f| f.into_inner())?;
        let trace = run.trace()?;
        match marks_of(&run, &trace)?.t4 {
            Some(t4) => points.push((run.config.task.r, t4 as f64)),
            None => skipped.push(format!("{} (no t4)", sub.display())),
        }
    }
    if points.len() < 3 {
        bail!("{} runs with a t4 under {}; need at least 3", points.len(), dir.display());
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fit = fit_power_law(&points)?;
    let rec = PowerLawRecord {
        a: fit.a,
        gamma: fit.gamma,
        b: fit.b,
        residual_rms: fit.residual_rms,
        gamma_identified: fit.gamma_identified,
        points,
        skipped,
    };
    write_file(&dir.join("powerlaw.json"), serde_json::to_string_pretty(&rec)?)?;
    println!("t4(r) = {} * r^-{} + {}", fit.a, fit.gamma, fit.b);
    if let Ok(rule) = stop_rule(&fit, fit.r_min(), 0) {
        println!("stop rule at r = {}: {} steps", fit.r_min(), rule.max_steps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Curves,
    Heatmap,
    Slices,
    Curvature,
    Pca,
    All,
}

fn need(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("{} not found; run the matching analysis first", path.display());
    }
    Ok(())
}

pub fn cmd_plot(dir: &Path, kind: PlotKind) -> Result<(), Failure> {
    let out = dir.join(PLOT_DIR);
    let res = match kind {
        PlotKind::Curves => plot_curves(dir, &out),
        PlotKind::Heatmap => plot_heatmaps(dir, &out),
        PlotKind::Slices => plot_slices(dir, &out),
        PlotKind::Curvature => plot_curvature(dir, &out),
        PlotKind::Pca => plot_pca(dir, &out),
        PlotKind::All => {
            let mut made = 0;
            let sources: [(&str, fn(&Path, &Path) -> anyhow::Result<()>); 5] = [
                (METRICS_FILE, plot_curves),
                ("sweep.csv", plot_heatmaps),
                (SLICE_DIR, plot_slices),
                ("curvature.csv", plot_curvature),
                ("pca.csv", plot_pca),
            ];
            for (src, f) in sources {
                if dir.join(src).exists() {
                    if let Err(e) = f(dir, &out) {
                        return Err(Failure::Runtime(e));
                    }
                    made += 1;
                }
            }
            if made == 0 {
                Err(anyhow!("no plottable CSVs in {}", dir.display()))
            } else {
                Ok(())
            }
        }
    };
    res.map_err(Failure::Runtime)
}

fn plot_curves(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let path = dir.join(METRICS_FILE);
    need(&path)?;
    let trace = read_metrics_file(&path)?;
    let col = |f: fn(&grokscope::harness::TraceRow) -> f64| -> Vec<(f64, f64)> {
        // steps start at 0; shift by one so the log axis keeps the first row
        trace.rows.iter().map(|r| (r.step as f64 + 1.0, f(r))).collect()
    };
    let mut markers = Vec::new();
    let cfg = dir.join(CONFIG_FILE);
    if cfg.exists() {
        let run = RunDir::open(dir).map_err(|f| f.into_inner())?;
        let m = marks_of(&run, &trace)?;
        for (name, t) in [("t2", m.t2), ("t4", m.t4)] {
            if let Some(t) = t {
                markers.push((t as f64 + 1.0, name.to_string()));
            }
        }
    }
    let chart = LineChart {
        title: "Learning curves".into(),
        x_label: "optimization step + 1".into(),
        y_label: "accuracy".into(),
        y2_label: "loss".into(),
        x_scale: Scale { log: true },
        y2_scale: Scale { log: true },
        series: vec![
            Series::new("train acc", col(|r| r.train_acc), Axis::Left, false, PALETTE[3]),
            Series::new("val acc", col(|r| r.val_acc), Axis::Left, false, PALETTE[2]),
            Series::new("train loss", col(|r| r.train_loss), Axis::Right, true, PALETTE[3]),
            Series::new("val loss", col(|r| r.val_loss), Axis::Right, true, PALETTE[2]),
        ],
        markers,
        ..Default::default()
    };
    write_file(&out.join("learning_curves.svg"), chart.render())
}

fn plot_heatmaps(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let path = dir.join("sweep.csv");
    need(&path)?;
    let recs = read_sweep_csv(fs::File::open(&path)?)?;
    let mut lrs: Vec<f64> = recs.iter().map(|r| r.lr).collect();
    let mut wds: Vec<f64> = recs.iter().map(|r| r.weight_decay).collect();
    for v in [&mut lrs, &mut wds] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    // cells averaged over seeds and fractions
    let cell = |f: &dyn Fn(&grokscope::harness::SweepRecord) -> Option<f64>| -> Vec<Vec<Option<f64>>> {
        wds.iter()
            .map(|&wd| {
                lrs.iter()
                    .map(|&lr| {
                        let vals: Vec<f64> = recs
                            .iter()
                            .filter(|r| r.lr == lr && r.weight_decay == wd)
                            .filter_map(f)
                            .collect();
                        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                    })
                    .collect()
            })
            .collect()
    };
    let x_ticks: Vec<String> = lrs.iter().map(|v| format!("{v:e}")).collect();
    let y_ticks: Vec<String> = wds.iter().map(|v| format!("{v}")).collect();
    for (file, title, f) in [
        (
            "heatmap_val_acc.svg",
            "Final validation accuracy",
            &(|r: &grokscope::harness::SweepRecord| r.final_val_acc) as &dyn Fn(&_) -> Option<f64>,
        ),
        ("heatmap_activity.svg", "Early-window activity", &|r: &grokscope::harness::SweepRecord| r.activity),
    ] {
        let h = Heatmap {
            title: title.into(),
            x_label: "learning rate".into(),
            y_label: "weight decay".into(),
            x_ticks: x_ticks.clone(),
            y_ticks: y_ticks.clone(),
            values: cell(f),
        };
        write_file(&out.join(file), h.render())?;
    }
    Ok(())
}

fn plot_slices(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let sdir = dir.join(SLICE_DIR);
    need(&sdir)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&sdir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("slice_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no 1D slice CSVs in {}", sdir.display());
    }
    for f in files {
        let s = read_slice_csv(fs::File::open(&f)?, 0)?;
        let stem = f.file_stem().and_then(|n| n.to_str()).unwrap_or("slice").to_string();
        let pts = |v: &[f64]| s.alphas.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
        let chart = LineChart {
            title: stem.clone(),
            x_label: "alpha".into(),
            y_label: "loss".into(),
            y2_label: "accuracy".into(),
            series: vec![
                Series::new("train loss", pts(&s.train_loss), Axis::Left, false, PALETTE[0]),
                Series::new("val loss", pts(&s.val_loss), Axis::Left, true, PALETTE[0]),
                Series::new("train acc", pts(&s.train_acc), Axis::Right, false, PALETTE[1]),
                Series::new("val acc", pts(&s.val_acc), Axis::Right, true, PALETTE[1]),
            ],
            ..Default::default()
        };
        write_file(&out.join(format!("{stem}.svg")), chart.render())?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CurvatureRecord {
    step: usize,
    lambda_max: f64,
    eig_ratio: Option<f64>,
}

fn plot_curvature(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let path = dir.join("curvature.csv");
    need(&path)?;
    let mut rd = csv::Reader::from_path(&path)?;
    let recs: Vec<CurvatureRecord> = rd.deserialize().collect::<Result<_, _>>()?;
    let chart = LineChart {
        title: "Hessian extremal eigenvalues".into(),
        x_label: "step".into(),
        y_label: "lambda_min / lambda_max".into(),
        y2_label: "lambda_max".into(),
        series: vec![
            Series::new(
                "lambda_min / lambda_max",
                recs.iter().filter_map(|r| r.eig_ratio.map(|c| (r.step as f64, c))).collect(),
                Axis::Left,
                false,
                PALETTE[0],
            ),
            Series::new(
                "lambda_max",
                recs.iter().map(|r| (r.step as f64, r.lambda_max)).collect(),
                Axis::Right,
                true,
                PALETTE[1],
            ),
        ],
        ..Default::default()
    };
    write_file(&out.join("condition.svg"), chart.render())
}

fn plot_pca(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let path = dir.join("pca.csv");
    need(&path)?;
    let (explained, rows) = read_pca_csv(fs::File::open(&path)?)?;
    let sc = Scatter {
        title: format!("Trajectory PCA (explained {:.3} + {:.3})", explained[0], explained[1]),
        x_label: "PC1".into(),
        y_label: "PC2".into(),
        points: rows.iter().map(|&(_, a, b)| (a, b)).collect(),
    };
    write_file(&out.join("pca.svg"), sc.render())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TestFunction {
    Rosenbrock,
    RosenbrockChained,
    Rastrigin,
}

pub struct TestFnArgs {
    pub function: TestFunction,
    pub dim: usize,
    pub log: bool,
    pub steps: usize,
    pub threshold: f64,
}

#[derive(Serialize)]
struct RaceSummary {
    optimizer: String,
    lr: f64,
    final_error: f64,
    final_value: f64,
    reached: bool,
    diverged_at: Option<usize>,
}

pub fn cmd_testfn(out: &Path, force: bool, args: TestFnArgs) -> Result<(), Failure> {
    let kind = match args.function {
        TestFunction::Rosenbrock => TestFnKind::RosenbrockPairwise,
        TestFunction::RosenbrockChained => TestFnKind::RosenbrockChained,
        TestFunction::Rastrigin => TestFnKind::Rastrigin,
    };
    let mut spec = TestFnSpec::new(kind, args.dim);
    spec.log_scale = args.log;
    spec.validate().map_err(|e| Failure::Config(e.into()))?;
    let start = if kind == TestFnKind::Rastrigin { RASTRIGIN_START } else { ROSENBROCK_START };
    let x0: Vec<f64> = (0..args.dim).map(|i| start[i % 2]).collect();
    prepare_out(out, force)?;
    let result = race(&spec, &default_race_optimizers(), &x0, args.steps, args.threshold)
        .map_err(|e| Failure::Runtime(e.into()))?;
    let run = || -> anyhow::Result<()> {
        write_file(&out.join("race.csv"), csv_bytes(|b| write_race_csv(b, &result))?)?;
        if spec.n == 2 {
            write_file(&out.join("contour.csv"), csv_bytes(|b| write_contour_csv(b, &spec, -3.0, 3.0, 121))?)?;
        }
        let summary: Vec<RaceSummary> = result
            .entries
            .iter()
            .map(|e| RaceSummary {
                optimizer: e.optimizer.algo.name().to_string(),
                lr: e.optimizer.lr,
                final_error: e.final_error,
                final_value: *e.values.last().expect("at least the start"),
                reached: e.reached,
                diverged_at: e.diverged_at,
            })
            .collect();
        for s in &summary {
            println!(
                "{:<9} error {:.3e} {}",
                s.optimizer,
                s.final_error,
                if s.reached { "reached" } else { "" }
            );
        }
        write_file(&out.join("race_summary.json"), serde_json::to_string_pretty(&summary)?)
    };
    run().map_err(Failure::Runtime)
}

pub struct IdSyntheticArgs {
    pub n: usize,
    pub ambient: usize,
    pub max_dim: usize,
    pub seed: u64,
    pub k: usize,
}

pub fn cmd_id_synthetic(out: &Path, force: bool, args: IdSyntheticArgs) -> Result<(), Failure> {
    if args.k < 2 {
        return Err(Failure::Config(anyhow!("--k must be at least 2")));
    }
    let mut specs = Vec::new();
    for kind in ManifoldKind::ALL {
        for d in 1..=args.max_dim {
            if kind.chart_dim(d) <= args.ambient {
                specs.push(ManifoldSpec {
                    kind,
                    d,
                    ambient: args.ambient,
                    n: args.n,
                    seed: args.seed.wrapping_add(specs.len() as u64),
                });
            }
        }
    }
    if specs.is_empty() {
        return Err(Failure::Config(anyhow!("no manifold fits in {} ambient dimensions", args.ambient)));
    }
    prepare_out(out, force)?;
    let rows = id_battery(&specs, args.k).map_err(|e| Failure::Runtime(e.into()))?;
    let bytes = csv_bytes(|b| write_battery_csv(b, &rows)).map_err(Failure::Runtime)?;
    write_file(&out.join("id_battery.csv"), bytes).map_err(Failure::Runtime)?;
    let mle: Vec<f64> = rows.iter().map(|r| r.mle.value).collect();
    let two: Vec<f64> = rows.iter().map(|r| r.twonn.value).collect();
    for r in &rows {
        println!("{:<9} d={} mle {:.3} twonn {:.3}", r.spec.kind.name(), r.spec.d, r.mle.value, r.twonn.value);
    }
    if let Some(c) = grokscope::harness::pearson(&mle, &two) {
        println!("pearson(mle, twonn) = {c:.4}");
    }
    Ok(())
}
