use std::path::{Path, PathBuf};

use super::Error;
use crate::neural::{Activation, Grid, MlpConfig, Optimizer};
use crate::partition::{DetectOptions, GranularityPolicy};
use crate::solver::SolverOptions;
use crate::synth::SynthConfig;
use crate::textfmt::{Document, Line, Section, SyntaxError};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Cluster whose dataset the grid is evaluated on.
    pub cluster: usize,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Timing repetitions (median reported).
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { reps: 20 }
    }
}

/// Everything one run needs. Paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub feeder: PathBuf,
    pub policy: GranularityPolicy,
    pub synth: SynthConfig,
    pub train: MlpConfig,
    pub sweep: Option<SweepConfig>,
    pub bench: BenchConfig,
    pub output: PathBuf,
}

fn cfg_err(path: &str, e: SyntaxError) -> Error {
    Error::Config(format!("{path}: {e}"))
}

/// Reads the keys of one section, rejecting unknown or repeated ones.
struct Fields<'a> {
    section: &'a Section,
    seen: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(section: &'a Section, allowed: &[&str]) -> Result<Self, SyntaxError> {
        let mut seen = Vec::new();
        for l in &section.lines {
            if !allowed.contains(&l.key()) {
                return Err(l.error_at(0, format!("unknown key `{}` in [{}]", l.key(), section.name)));
            }
            if seen.contains(&l.key()) {
                return Err(l.error_at(0, format!("duplicate key `{}`", l.key())));
            }
            seen.push(l.key());
        }
        Ok(Self { section, seen })
    }

    fn line(&self, key: &str) -> Option<&'a Line> {
        self.seen.contains(&key).then(|| self.section.get(key)).flatten()
    }

    fn single(&self, key: &str) -> Result<Option<&'a Line>, SyntaxError> {
        match self.line(key) {
            Some(l) => l.expect_len(2, 2).map(|_| Some(l)),
            None => Ok(None),
        }
    }

    fn usize(&self, key: &str, into: &mut usize) -> Result<(), SyntaxError> {
        if let Some(l) = self.single(key)? {
            *into = l.usize_at(1)?;
        }
        Ok(())
    }

    fn u64(&self, key: &str, into: &mut u64) -> Result<(), SyntaxError> {
        if let Some(l) = self.single(key)? {
            *into = l.u64_at(1)?;
        }
        Ok(())
    }

    fn f64(&self, key: &str, into: &mut f64) -> Result<(), SyntaxError> {
        if let Some(l) = self.single(key)? {
            *into = l.f64_at(1)?;
        }
        Ok(())
    }

    /// `auto` maps to None.
    fn auto_usize(&self, key: &str, into: &mut Option<usize>) -> Result<(), SyntaxError> {
        if let Some(l) = self.single(key)? {
            *into = if l.str_at(1)? == "auto" { None } else { Some(l.usize_at(1)?) };
        }
        Ok(())
    }

    fn auto_f64(&self, key: &str, into: &mut Option<f64>) -> Result<(), SyntaxError> {
        if let Some(l) = self.single(key)? {
            *into = if l.str_at(1)? == "auto" { None } else { Some(l.f64_at(1)?) };
        }
        Ok(())
    }

    fn word<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>, into: &mut T) -> Result<(), SyntaxError> {
        if let Some(l) = self.single(key)? {
            *into = parse(l.str_at(1)?).ok_or_else(|| l.error_at(1, format!("invalid value for `{key}`")))?;
        }
        Ok(())
    }

    /// Non-empty option list; absent keys keep `default`.
    fn list<T>(&self, key: &str, parse: impl Fn(&Line, usize) -> Result<T, SyntaxError>, default: T) -> Result<Vec<T>, SyntaxError> {
        match self.line(key) {
            None => Ok(vec![default]),
            Some(l) => (1..l.tokens.len()).map(|i| parse(l, i)).collect(),
        }
    }
}

fn word_at<T>(parse: impl Fn(&str) -> Option<T>) -> impl Fn(&Line, usize) -> Result<T, SyntaxError> {
    move |l: &Line, i: usize| {
        let s = l.str_at(i)?;
        parse(s).ok_or_else(|| l.error_at(i, format!("invalid value `{s}`")))
    }
}

fn auto_f64_at(l: &Line, i: usize) -> Result<Option<f64>, SyntaxError> {
    if l.str_at(i)? == "auto" {
        Ok(None)
    } else {
        l.f64_at(i).map(Some)
    }
}

const TRAIN_KEYS: [&str; 10] = [
    "hidden_neurons",
    "hidden_scale",
    "hidden_layers",
    "activation_hidden",
    "activation_output",
    "optimizer",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
];

fn parse_train(s: &Section) -> Result<MlpConfig, SyntaxError> {
    let f = Fields::new(s, &TRAIN_KEYS)?;
    let mut c = MlpConfig::default();
    f.auto_usize("hidden_neurons", &mut c.hidden_neurons)?;
    f.f64("hidden_scale", &mut c.hidden_scale)?;
    f.usize("hidden_layers", &mut c.hidden_layers)?;
    f.word("activation_hidden", Activation::parse, &mut c.activation_hidden)?;
    f.word("activation_output", Activation::parse, &mut c.activation_output)?;
    f.word("optimizer", Optimizer::parse, &mut c.optimizer)?;
    f.auto_f64("learning_rate", &mut c.learning_rate)?;
    f.usize("batch_size", &mut c.batch_size)?;
    f.usize("epochs", &mut c.epochs)?;
    f.u64("seed", &mut c.seed)?;
    Ok(c)
}

fn parse_sweep(s: &Section, base: &MlpConfig) -> Result<SweepConfig, SyntaxError> {
    let mut keys = TRAIN_KEYS.to_vec();
    keys.retain(|k| !matches!(*k, "hidden_neurons" | "seed"));
    keys.push("cluster");
    let f = Fields::new(s, &keys)?;
    let mut cluster = 0;
    f.usize("cluster", &mut cluster)?;
    let grid = Grid {
        hidden_scale: f.list("hidden_scale", |l, i| l.f64_at(i), base.hidden_scale)?,
        hidden_layers: f.list("hidden_layers", |l, i| l.usize_at(i), base.hidden_layers)?,
        activation_hidden: f.list("activation_hidden", word_at(Activation::parse), base.activation_hidden)?,
        activation_output: f.list("activation_output", word_at(Activation::parse), base.activation_output)?,
        optimizer: f.list("optimizer", word_at(Optimizer::parse), base.optimizer)?,
        learning_rate: f.list("learning_rate", auto_f64_at, base.learning_rate)?,
        batch_size: f.list("batch_size", |l, i| l.usize_at(i), base.batch_size)?,
        epochs: f.list("epochs", |l, i| l.usize_at(i), base.epochs)?,
    };
    Ok(SweepConfig { cluster, grid })
}

fn parse_doc(doc: &Document, base_dir: &Path) -> Result<RunConfig, SyntaxError> {
    for s in &doc.sections {
        if !matches!(s.name.as_str(), "feeder" | "partition" | "synth" | "solver" | "train" | "sweep" | "bench" | "output") {
            return Err(SyntaxError::new(s.line, 1, format!("unknown section [{}]", s.name)));
        }
    }
    let path_of = |section: &str| -> Result<PathBuf, SyntaxError> {
        let s = doc.require(section)?;
        let f = Fields::new(s, &["path"])?;
        let l = f.single("path")?.ok_or_else(|| SyntaxError::new(s.line, 1, format!("[{section}] needs `path`")))?;
        Ok(base_dir.join(l.str_at(1)?))
    };
    let feeder = path_of("feeder")?;
    let output = path_of("output")?;

    let mut policy = GranularityPolicy::default();
    if let Some(s) = doc.section("partition") {
        let f = Fields::new(s, &["min_size", "max_size", "max_levels", "seed", "trials", "detect_levels"])?;
        f.usize("min_size", &mut policy.min_size)?;
        f.usize("max_size", &mut policy.max_size)?;
        f.usize("max_levels", &mut policy.max_levels)?;
        let d: &mut DetectOptions = &mut policy.detect;
        f.u64("seed", &mut d.seed)?;
        f.usize("trials", &mut d.trials)?;
        f.usize("detect_levels", &mut d.max_levels)?;
    }

    let mut synth = SynthConfig::default();
    if let Some(s) = doc.section("synth") {
        let f = Fields::new(
            s,
            &[
                "n_samples",
                "variants",
                "mu_min",
                "mu_max",
                "jitter",
                "shape_seed",
                "split_seed",
                "median_window",
                "max_failure_ratio",
            ],
        )?;
        f.usize("n_samples", &mut synth.n_samples)?;
        f.usize("variants", &mut synth.variants)?;
        f.f64("mu_min", &mut synth.mu_min)?;
        f.f64("mu_max", &mut synth.mu_max)?;
        f.f64("jitter", &mut synth.jitter_sigma)?;
        f.u64("shape_seed", &mut synth.shape_seed)?;
        f.u64("split_seed", &mut synth.split_seed)?;
        f.usize("median_window", &mut synth.median_window)?;
        f.f64("max_failure_ratio", &mut synth.max_failure_ratio)?;
    }
    if let Some(s) = doc.section("solver") {
        let f = Fields::new(s, &["tolerance", "max_iterations"])?;
        let o: &mut SolverOptions = &mut synth.solver;
        f.f64("tolerance", &mut o.tolerance)?;
        f.usize("max_iterations", &mut o.max_iterations)?;
    }

    let train = match doc.section("train") {
        Some(s) => parse_train(s)?,
        None => MlpConfig::default(),
    };
    let sweep = doc.section("sweep").map(|s| parse_sweep(s, &train)).transpose()?;
    let mut bench = BenchConfig::default();
    if let Some(s) = doc.section("bench") {
        Fields::new(s, &["reps"])?.usize("reps", &mut bench.reps)?;
    }
    Ok(RunConfig { feeder, policy, synth, train, sweep, bench, output })
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path, origin: &str) -> Result<Self, Error> {
        let doc = Document::parse(text).map_err(|e| cfg_err(origin, e))?;
        let cfg = parse_doc(&doc, base_dir).map_err(|e| cfg_err(origin, e))?;
        cfg.train.validate().map_err(|e| Error::Config(format!("{origin}: [train] {e}")))?;
        if cfg.bench.reps == 0 {
            return Err(Error::Config(format!("{origin}: [bench] reps must be at least 1")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    /// Replaces every seed (partition, shapes, split, training) with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.policy.detect.seed = seed;
        self.synth.shape_seed = seed;
        self.synth.split_seed = seed;
        self.train.seed = seed;
        self
    }
}
