//! Experiment configuration: a JSON document with command-line overrides.
//!
//! Hyperparameters sit at the top level of the document next to the dataset
//! paths; the partition, synthetic-data and threshold settings are nested.
//! Every offending field is reported at once.

use std::path::{Path, PathBuf};

use grasspca_core::data::{PartitionSpec, PartitionStrategy, SynthConfig};
use grasspca_core::federation::{Algorithm, Hyperparams, Initialization};
use grasspca_core::pca::GramScaling;
use serde_json::{Map, Value};

use crate::error::{CliError, FieldIssue, ValidationError};

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files {
        train: PathBuf,
        test: Option<PathBuf>,
        label_column: Option<String>,
    },
    Synthetic(SynthConfig),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdChoice {
    Youden,
    Fixed(f64),
    Holdout(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub hyperparams: Hyperparams,
    pub partition: PartitionSpec,
    pub threshold: ThresholdChoice,
    /// z-score every feature with statistics of the training data.
    pub normalize: bool,
    pub output_dir: Option<PathBuf>,
}

/// Values given on the command line; each replaces the file's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<i64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub rounds: Option<i64>,
    pub local_iters: Option<i64>,
    pub sample_fraction: Option<f64>,
    pub algorithm: Option<String>,
    pub seed: Option<u64>,
    pub holdout: Option<f64>,
    pub out: Option<PathBuf>,
}

const TOP_LEVEL: &[&str] = &[
    "train",
    "test",
    "label_column",
    "synthetic",
    "partition",
    "threshold",
    "normalize",
    "output_dir",
    "k",
    "rho",
    "eta",
    "local_iters",
    "rounds",
    "sample_fraction",
    "seed",
    "algorithm",
    "client_rho",
    "gram_scaling",
    "align_representatives",
    "initialization",
    // Written by `train` into the manifest; ignored on input.
    "run",
];

struct Reader<'a> {
    map: &'a Map<String, Value>,
    prefix: &'static str,
    issues: &'a mut Vec<FieldIssue>,
}

impl Reader<'_> {
    fn issue(&mut self, field: &str, reason: impl Into<String>) {
        self.issues.push(FieldIssue {
            field: format!("{}{field}", self.prefix),
            reason: reason.into(),
        });
    }

    fn get(&self, field: &str) -> Option<&Value> {
        self.map.get(field).filter(|v| !v.is_null())
    }

    fn f64(&mut self, field: &str, default: f64) -> f64 {
        match self.get(field) {
            None => default,
            Some(v) => v.as_f64().unwrap_or_else(|| {
                self.issue(field, "must be a number");
                default
            }),
        }
    }

    fn count(&mut self, field: &str, default: usize) -> usize {
        match self.get(field) {
            None => default,
            Some(v) => match v.as_i64() {
                Some(n) if n >= 0 => n as usize,
                Some(_) => {
                    self.issue(field, "must not be negative");
                    default
                }
                None => {
                    self.issue(field, "must be an integer");
                    default
                }
            },
        }
    }

    fn u64(&mut self, field: &str, default: u64) -> u64 {
        match self.get(field) {
            None => default,
            Some(v) => v.as_u64().unwrap_or_else(|| {
                self.issue(field, "must be a nonnegative 64-bit integer");
                default
            }),
        }
    }

    fn bool(&mut self, field: &str, default: bool) -> bool {
        match self.get(field) {
            None => default,
            Some(v) => v.as_bool().unwrap_or_else(|| {
                self.issue(field, "must be true or false");
                default
            }),
        }
    }

    fn string(&mut self, field: &str) -> Option<String> {
        match self.get(field)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.issue(field, "must be a string");
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, field: &str, default: T, options: &[(&str, T)]) -> T {
        let Some(s) = self.string(field) else { return default };
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.issue(field, format!("must be one of {}", names.join(", ")));
                default
            }
        }
    }

    fn unknown(&mut self, allowed: &[&str]) {
        let extra: Vec<String> = self
            .map
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .cloned()
            .collect();
        for k in extra {
            self.issue(&k, "is not a recognized field");
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::canonicalize(&joined).unwrap_or(joined)
}

fn apply_overrides(map: &mut Map<String, Value>, o: &Overrides) {
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            map.insert(key.to_string(), v);
        }
    };
    set("k", o.k.map(Value::from));
    set("rho", o.rho.map(Value::from));
    set("eta", o.eta.map(Value::from));
    set("rounds", o.rounds.map(Value::from));
    set("local_iters", o.local_iters.map(Value::from));
    set("sample_fraction", o.sample_fraction.map(Value::from));
    set("algorithm", o.algorithm.clone().map(Value::from));
    set("seed", o.seed.map(Value::from));
    set("threshold", o.holdout.map(|f| serde_json::json!({ "holdout": f })));
    set(
        "output_dir",
        o.out.as_ref().map(|p| Value::from(p.display().to_string())),
    );
}

fn hyperparams(r: &mut Reader<'_>) -> Hyperparams {
    let d = Hyperparams::default();
    let client_rho = match r.get("client_rho") {
        None => None,
        Some(Value::Array(a)) => {
            let v: Option<Vec<f64>> = a.iter().map(Value::as_f64).collect();
            if v.is_none() {
                r.issue("client_rho", "must be an array of numbers");
            }
            v
        }
        Some(_) => {
            r.issue("client_rho", "must be an array of numbers");
            None
        }
    };
    let hp = Hyperparams {
        k: r.count("k", d.k),
        rho: r.f64("rho", d.rho),
        eta: r.f64("eta", d.eta),
        local_iters: r.count("local_iters", d.local_iters),
        rounds: r.count("rounds", d.rounds),
        sample_fraction: r.f64("sample_fraction", d.sample_fraction),
        seed: r.u64("seed", d.seed),
        algorithm: r.choice(
            "algorithm",
            d.algorithm,
            &[("fedpe", Algorithm::FedPE), ("fedpg", Algorithm::FedPG)],
        ),
        client_rho,
        gram_scaling: r.choice(
            "gram_scaling",
            d.gram_scaling,
            &[("raw", GramScaling::Raw), ("per_sample", GramScaling::PerSample)],
        ),
        align_representatives: r.bool("align_representatives", d.align_representatives),
        initialization: r.choice(
            "initialization",
            d.initialization,
            &[
                ("shared", Initialization::Shared),
                ("independent", Initialization::Independent),
            ],
        ),
    };
    let already: Vec<String> = r.issues.iter().map(|i| i.field.clone()).collect();
    for (field, reason) in hp.violations() {
        if !already.iter().any(|f| f == field) {
            r.issue(field, reason);
        }
    }
    hp
}

fn synthetic(v: &Value, issues: &mut Vec<FieldIssue>) -> SynthConfig {
    let Some(map) = v.as_object() else {
        issues.push(FieldIssue {
            field: "synthetic".into(),
            reason: "must be an object".into(),
        });
        return SynthConfig::default();
    };
    let mut r = Reader {
        map,
        prefix: "synthetic.",
        issues,
    };
    r.unknown(&[
        "d",
        "k",
        "n_per_client",
        "n_clients",
        "n_test",
        "noise_sigma",
        "anomaly_fraction",
        "anomaly_scale",
        "seed",
        "latent_scales",
    ]);
    let dflt = SynthConfig::default();
    let latent_scales = match r.get("latent_scales") {
        None => None,
        Some(v) => {
            let s: Option<Vec<f64>> = v.as_array().and_then(|a| a.iter().map(Value::as_f64).collect());
            if s.is_none() {
                r.issue("latent_scales", "must be an array of numbers");
            }
            s
        }
    };
    let cfg = SynthConfig {
        d: r.count("d", dflt.d),
        k: r.count("k", dflt.k),
        n_per_client: r.count("n_per_client", dflt.n_per_client),
        n_clients: r.count("n_clients", dflt.n_clients),
        n_test: r.count("n_test", dflt.n_test),
        noise_sigma: r.f64("noise_sigma", dflt.noise_sigma),
        anomaly_fraction: r.f64("anomaly_fraction", dflt.anomaly_fraction),
        anomaly_scale: r.f64("anomaly_scale", dflt.anomaly_scale),
        seed: r.u64("seed", dflt.seed),
        latent_scales,
    };
    if cfg.k == 0 || cfg.k >= cfg.d {
        r.issue("k", "must satisfy 0 < k < d");
    }
    if !(0.0..1.0).contains(&cfg.anomaly_fraction) {
        r.issue("anomaly_fraction", "must be in [0, 1)");
    }
    if !(cfg.noise_sigma >= 0.0) {
        r.issue("noise_sigma", "must be nonnegative");
    }
    if cfg.n_clients == 0 || cfg.n_per_client == 0 {
        r.issue("n_clients", "clients and samples per client must be positive");
    }
    if cfg.latent_scales.as_ref().is_some_and(|s| s.len() != cfg.k) {
        r.issue("latent_scales", "must have k entries");
    }
    cfg
}

fn partition(v: Option<&Value>, data: &DataSource, issues: &mut Vec<FieldIssue>) -> PartitionSpec {
    let empty = Map::new();
    let map = match v {
        None | Some(Value::Null) => &empty,
        Some(Value::Object(m)) => m,
        Some(_) => {
            issues.push(FieldIssue {
                field: "partition".into(),
                reason: "must be an object".into(),
            });
            &empty
        }
    };
    let mut r = Reader {
        map,
        prefix: "partition.",
        issues,
    };
    r.unknown(&["n_clients", "group_feature", "strategy"]);
    let group_feature = r.string("group_feature");
    let default_strategy = if group_feature.is_some() {
        PartitionStrategy::GroupedQuantile
    } else {
        PartitionStrategy::UniformShards
    };
    let strategy = r.choice(
        "strategy",
        default_strategy,
        &[
            ("grouped_quantile", PartitionStrategy::GroupedQuantile),
            ("uniform_shards", PartitionStrategy::UniformShards),
        ],
    );
    let n_clients = r.count("n_clients", 100);
    if n_clients == 0 {
        r.issue("n_clients", "must be at least 1");
    }
    if strategy == PartitionStrategy::GroupedQuantile {
        match (&group_feature, data) {
            (None, _) => r.issue("group_feature", "is required by the grouped_quantile strategy"),
            (Some(name), DataSource::Files { train, .. }) => {
                if crate::csvio::read_header(train).is_ok_and(|h| !h.contains(name)) {
                    r.issue(
                        "group_feature",
                        format!("`{name}` is not a column of the training file"),
                    );
                }
            }
            (Some(_), DataSource::Synthetic(_)) => {}
        }
    }
    PartitionSpec {
        n_clients,
        group_feature,
        strategy,
    }
}

fn threshold(v: Option<&Value>, issues: &mut Vec<FieldIssue>) -> ThresholdChoice {
    let mut bad = |reason: &str| {
        issues.push(FieldIssue {
            field: "threshold".into(),
            reason: reason.into(),
        });
        ThresholdChoice::Youden
    };
    match v {
        None | Some(Value::Null) => ThresholdChoice::Youden,
        Some(Value::String(s)) if s == "youden" => ThresholdChoice::Youden,
        Some(Value::Number(n)) => match n.as_f64() {
            Some(t) if t.is_finite() => ThresholdChoice::Fixed(t),
            _ => bad("must be finite"),
        },
        Some(Value::Object(m)) if m.len() == 1 => match (m.get("fixed"), m.get("holdout")) {
            (Some(t), None) => match t.as_f64() {
                Some(t) if t.is_finite() => ThresholdChoice::Fixed(t),
                _ => bad("fixed threshold must be a finite number"),
            },
            (None, Some(f)) => match f.as_f64() {
                Some(f) if f > 0.0 && f < 1.0 => ThresholdChoice::Holdout(f),
                _ => bad("holdout fraction must be in (0, 1)"),
            },
            _ => bad("must be \"youden\", a number, {\"fixed\": t} or {\"holdout\": fraction}"),
        },
        Some(_) => bad("must be \"youden\", a number, {\"fixed\": t} or {\"holdout\": fraction}"),
    }
}

/// Builds a validated configuration from a JSON document and overrides.
/// Relative paths are resolved against `base` (the config file's directory).
pub fn parse_value(mut doc: Value, base: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut issues = Vec::new();
    let Some(map) = doc.as_object_mut() else {
        return Err(ValidationError {
            issues: vec![FieldIssue {
                field: "config".into(),
                reason: "must be a JSON object".into(),
            }],
        }
        .into());
    };
    apply_overrides(map, overrides);
    let map = &*map;
    let mut r = Reader {
        map,
        prefix: "",
        issues: &mut issues,
    };
    r.unknown(TOP_LEVEL);
    let hp = hyperparams(&mut r);
    let normalize = r.bool("normalize", true);
    let train = r.string("train");
    let test = r.string("test");
    let label_column = r.string("label_column");
    let output_dir = r.string("output_dir").map(PathBuf::from);

    let data = match (map.get("synthetic").filter(|v| !v.is_null()), train) {
        (Some(_), Some(_)) => {
            r.issue("train", "cannot be combined with `synthetic`");
            DataSource::Synthetic(SynthConfig::default())
        }
        (Some(s), None) => {
            if test.is_some() {
                r.issue("test", "cannot be combined with `synthetic`");
            }
            DataSource::Synthetic(synthetic(s, r.issues))
        }
        (None, Some(train)) => {
            let train = resolve(base, &train);
            if !train.is_file() {
                r.issue("train", format!("file not found: {}", train.display()));
            }
            let test = test.map(|t| resolve(base, &t));
            if let Some(t) = &test {
                if !t.is_file() {
                    r.issue("test", format!("file not found: {}", t.display()));
                }
            }
            DataSource::Files {
                train,
                test,
                label_column,
            }
        }
        (None, None) => {
            r.issue("train", "is required unless `synthetic` is given");
            DataSource::Synthetic(SynthConfig::default())
        }
    };
    let partition = partition(map.get("partition"), &data, &mut issues);
    let threshold = threshold(map.get("threshold"), &mut issues);
    if !issues.is_empty() {
        return Err(ValidationError { issues }.into());
    }
    Ok(ExperimentConfig {
        data,
        hyperparams: hp,
        partition,
        threshold,
        normalize,
        output_dir,
    })
}

/// Reads `path` (if any) and validates it together with `overrides`.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let (doc, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::MissingFile(p.to_path_buf()),
                _ => CliError::io(p, e),
            })?;
            let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
                path: p.to_path_buf(),
                line: e.line(),
                detail: e.to_string(),
            })?;
            (doc, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Value::Object(Map::new()), PathBuf::from(".")),
    };
    parse_value(doc, &base, overrides)
}

impl ExperimentConfig {
    /// The configuration with every default spelled out, in the input schema.
    pub fn to_json(&self) -> Value {
        let mut map = match serde_json::to_value(&self.hyperparams) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        match &self.data {
            DataSource::Files {
                train,
                test,
                label_column,
            } => {
                map.insert("train".into(), train.display().to_string().into());
                if let Some(t) = test {
                    map.insert("test".into(), t.display().to_string().into());
                }
                if let Some(l) = label_column {
                    map.insert("label_column".into(), l.clone().into());
                }
            }
            DataSource::Synthetic(s) => {
                map.insert("synthetic".into(), serde_json::to_value(s).unwrap_or_default());
            }
        }
        map.insert(
            "partition".into(),
            serde_json::to_value(&self.partition).unwrap_or_default(),
        );
        map.insert(
            "threshold".into(),
            match self.threshold {
                ThresholdChoice::Youden => "youden".into(),
                ThresholdChoice::Fixed(t) => serde_json::json!({ "fixed": t }),
                ThresholdChoice::Holdout(f) => serde_json::json!({ "holdout": f }),
            },
        );
        map.insert("normalize".into(), self.normalize.into());
        Value::Object(map)
    }
}
