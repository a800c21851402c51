//! Run configuration: key=value text covering dataset paths, task selection,
//! model hyperparameters, optimizer settings, and evaluation options.

use std::path::PathBuf;

use crate::edgebank::EdgeBankVariant;
use crate::error::CtdgError;
use crate::eval::NegativeStrategy;
use crate::model::DyGFormerHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    LinkPrediction,
    NodeClassification,
    EdgeBank,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task, CtdgError> {
        match s {
            "link_prediction" => Ok(Task::LinkPrediction),
            "node_classification" => Ok(Task::NodeClassification),
            "edgebank" => Ok(Task::EdgeBank),
            other => Err(CtdgError::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Which past events feed the historical/inductive candidate pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryPool {
    /// Everything observed before the evaluation split.
    AllBeforeEval,
    /// Train-range events only.
    TrainOnly,
}

/// Which observed events build the edge memory when evaluating on test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemorySpan {
    TrainVal,
    TrainOnly,
}

/// The supported length-and-patch-size ladder.
pub const PRESETS: [(usize, usize); 8] = [
    (32, 1),
    (64, 2),
    (128, 4),
    (256, 8),
    (512, 16),
    (1024, 32),
    (2048, 64),
    (4096, 128),
];

pub fn parse_preset(s: &str) -> Result<(usize, usize), CtdgError> {
    let (l, p) = s
        .split_once('&')
        .ok_or_else(|| CtdgError::Config(format!("preset `{s}` must look like 512&16")))?;
    let l: usize = l
        .trim()
        .parse()
        .map_err(|_| CtdgError::Config(format!("bad preset length in `{s}`")))?;
    let p: usize = p
        .trim()
        .parse()
        .map_err(|_| CtdgError::Config(format!("bad preset patch size in `{s}`")))?;
    if !PRESETS.contains(&(l, p)) {
        return Err(CtdgError::Config(format!(
            "preset {l}&{p} is not on the supported ladder"
        )));
    }
    Ok((l, p))
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub node_features: Option<PathBuf>,
    pub task: Task,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub hyper: DyGFormerHyper,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub strategy: NegativeStrategy,
    pub ratios: (f64, f64, f64),
    pub history_pool: HistoryPool,
    pub allow_fallback: bool,
    pub inductive_two_sided: bool,
    pub edgebank_variants: Vec<EdgeBankVariant>,
    pub edgebank_threshold: u32,
    pub memory_span: MemorySpan,
    pub node_head_joint: bool,
    pub shard_size: usize,
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            node_features: None,
            task: Task::LinkPrediction,
            checkpoint: None,
            out_dir: PathBuf::from("run_out"),
            hyper: DyGFormerHyper::default(),
            lr: 1e-4,
            batch_size: 200,
            epochs: 100,
            patience: 20,
            seeds: vec![0, 1, 2, 3, 4],
            strategy: NegativeStrategy::Random,
            ratios: (0.70, 0.15, 0.15),
            history_pool: HistoryPool::AllBeforeEval,
            allow_fallback: true,
            inductive_two_sided: false,
            edgebank_variants: EdgeBankVariant::all().to_vec(),
            edgebank_threshold: 1,
            memory_span: MemorySpan::TrainVal,
            node_head_joint: false,
            shard_size: 16,
            audit: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CtdgError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CtdgError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        if (cfg.ratios.0 + cfg.ratios.1 + cfg.ratios.2 - 1.0).abs() > 1e-9 {
            return Err(CtdgError::Config("split ratios must sum to 1".into()));
        }
        if cfg.lr <= 0.0 {
            return Err(CtdgError::Config("lr must be positive".into()));
        }
        if cfg.batch_size == 0 {
            return Err(CtdgError::Config("batch_size must be positive".into()));
        }
        if cfg.patience > cfg.epochs {
            return Err(CtdgError::Config("patience must not exceed epochs".into()));
        }
        if cfg.seeds.is_empty() {
            return Err(CtdgError::Config("at least one seed is required".into()));
        }
        cfg.hyper.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CtdgError> {
        let bad = |k: &str, v: &str| CtdgError::Config(format!("bad value for {k}: `{v}`"));
        match key {
            "data" => self.data = PathBuf::from(value),
            "node_features" => self.node_features = Some(PathBuf::from(value)),
            "task" => self.task = Task::parse(value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "d_t" => self.hyper.d_t = value.parse().map_err(|_| bad(key, value))?,
            "d_c" => self.hyper.d_c = value.parse().map_err(|_| bad(key, value))?,
            "d" => self.hyper.d = value.parse().map_err(|_| bad(key, value))?,
            "d_out" => self.hyper.d_out = value.parse().map_err(|_| bad(key, value))?,
            "heads" => self.hyper.heads = value.parse().map_err(|_| bad(key, value))?,
            "layers" => self.hyper.layers = value.parse().map_err(|_| bad(key, value))?,
            "max_len" => self.hyper.max_len = value.parse().map_err(|_| bad(key, value))?,
            "patch_size" => self.hyper.patch_size = value.parse().map_err(|_| bad(key, value))?,
            "preset" => {
                let (l, p) = parse_preset(value)?;
                self.hyper.max_len = l;
                self.hyper.patch_size = p;
            }
            "dropout" => self.hyper.dropout = value.parse().map_err(|_| bad(key, value))?,
            "use_ncoe" => self.hyper.flags.use_ncoe = value.parse().map_err(|_| bad(key, value))?,
            "use_te" => self.hyper.flags.use_te = value.parse().map_err(|_| bad(key, value))?,
            "mix_sequences" => {
                self.hyper.flags.mix_sequences = value.parse().map_err(|_| bad(key, value))?
            }
            "sep_no" => self.hyper.flags.sep_no = value.parse().map_err(|_| bad(key, value))?,
            "include_self" => {
                self.hyper.flags.include_self = value.parse().map_err(|_| bad(key, value))?
            }
            "lr" => self.lr = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key, value))?,
            "patience" => self.patience = value.parse().map_err(|_| bad(key, value))?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(key, value))?;
            }
            "strategy" => self.strategy = NegativeStrategy::parse(value)?,
            "train_ratio" => self.ratios.0 = value.parse().map_err(|_| bad(key, value))?,
            "val_ratio" => self.ratios.1 = value.parse().map_err(|_| bad(key, value))?,
            "test_ratio" => self.ratios.2 = value.parse().map_err(|_| bad(key, value))?,
            "history_pool" => {
                self.history_pool = match value {
                    "all" => HistoryPool::AllBeforeEval,
                    "train" => HistoryPool::TrainOnly,
                    _ => return Err(bad(key, value)),
                }
            }
            "allow_fallback" => self.allow_fallback = value.parse().map_err(|_| bad(key, value))?,
            "inductive_two_sided" => {
                self.inductive_two_sided = value.parse().map_err(|_| bad(key, value))?
            }
            "edgebank_variants" => {
                if value == "all" {
                    self.edgebank_variants = EdgeBankVariant::all().to_vec();
                } else {
                    self.edgebank_variants = value
                        .split(',')
                        .map(|s| match s.trim() {
                            "infinite" => Ok(EdgeBankVariant::Infinite),
                            "tw_ts" => Ok(EdgeBankVariant::TimeWindowTestSpan),
                            "tw_re" => Ok(EdgeBankVariant::TimeWindowRepeat),
                            "threshold" => Ok(EdgeBankVariant::Threshold),
                            other => Err(CtdgError::Config(format!(
                                "unknown edgebank variant `{other}`"
                            ))),
                        })
                        .collect::<Result<_, _>>()?;
                }
            }
            "edgebank_threshold" => {
                self.edgebank_threshold = value.parse().map_err(|_| bad(key, value))?
            }
            "memory_span" => {
                self.memory_span = match value {
                    "train_val" => MemorySpan::TrainVal,
                    "train" => MemorySpan::TrainOnly,
                    _ => return Err(bad(key, value)),
                }
            }
            "node_head_joint" => {
                self.node_head_joint = value.parse().map_err(|_| bad(key, value))?
            }
            "shard_size" => self.shard_size = value.parse().map_err(|_| bad(key, value))?,
            "audit" => self.audit = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(CtdgError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The fully resolved configuration as key=value text for run manifests.
    pub fn resolved_text(&self) -> String {
        let h = &self.hyper;
        let f = h.flags;
        let variants: Vec<&str> = self.edgebank_variants.iter().map(|v| v.name()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "data={}\nnode_features={}\ntask={}\ncheckpoint={}\nout_dir={}\n\
             d_t={}\nd_c={}\nd={}\nd_out={}\nheads={}\nlayers={}\nmax_len={}\npatch_size={}\ndropout={}\n\
             use_ncoe={}\nuse_te={}\nmix_sequences={}\nsep_no={}\ninclude_self={}\n\
             lr={}\nbatch_size={}\nepochs={}\npatience={}\nseeds={}\nstrategy={}\n\
             train_ratio={}\nval_ratio={}\ntest_ratio={}\nhistory_pool={}\nallow_fallback={}\n\
             inductive_two_sided={}\nedgebank_variants={}\nedgebank_threshold={}\nmemory_span={}\n\
             node_head_joint={}\nshard_size={}\naudit={}\n",
            self.data.display(),
            self.node_features
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            match self.task {
                Task::LinkPrediction => "link_prediction",
                Task::NodeClassification => "node_classification",
                Task::EdgeBank => "edgebank",
            },
            self.checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            self.out_dir.display(),
            h.d_t,
            h.d_c,
            h.d,
            h.d_out,
            h.heads,
            h.layers,
            h.max_len,
            h.patch_size,
            h.dropout,
            f.use_ncoe,
            f.use_te,
            f.mix_sequences,
            f.sep_no,
            f.include_self,
            self.lr,
            self.batch_size,
            self.epochs,
            self.patience,
            seeds.join(","),
            self.strategy.name(),
            self.ratios.0,
            self.ratios.1,
            self.ratios.2,
            match self.history_pool {
                HistoryPool::AllBeforeEval => "all",
                HistoryPool::TrainOnly => "train",
            },
            self.allow_fallback,
            self.inductive_two_sided,
            variants.join(","),
            self.edgebank_threshold,
            match self.memory_span {
                MemorySpan::TrainVal => "train_val",
                MemorySpan::TrainOnly => "train",
            },
            self.node_head_joint,
            self.shard_size,
            self.audit,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.batch_size, 200);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.patience, 20);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.hyper.d_t, 100);
        assert_eq!(cfg.hyper.d_c, 50);
        assert_eq!(cfg.hyper.d, 50);
        assert_eq!(cfg.hyper.d_out, 172);
        assert_eq!(cfg.hyper.heads, 2);
        assert_eq!(cfg.hyper.layers, 2);
    }

    #[test]
    fn parses_and_round_trips_key_value_text() {
        let text = "data=events.csv\ntask=link_prediction\npreset=512&16\nseeds=0,1,2\nstrategy=hist\ndropout=0.2\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.hyper.max_len, 512);
        assert_eq!(cfg.hyper.patch_size, 16);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.strategy, NegativeStrategy::Historical);
        // resolved text re-parses to the same configuration
        let back = RunConfig::parse(&cfg.resolved_text()).unwrap();
        assert_eq!(back.hyper, cfg.hyper);
        assert_eq!(back.seeds, cfg.seeds);
        assert_eq!(back.strategy, cfg.strategy);
    }

    #[test]
    fn every_ladder_preset_parses() {
        for (l, p) in PRESETS {
            let got = parse_preset(&format!("{l}&{p}")).unwrap();
            assert_eq!(got, (l, p));
        }
        assert!(parse_preset("100&3").is_err());
        assert!(parse_preset("512x16").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("task=unknown\n").is_err());
        assert!(RunConfig::parse("lr=0\ndata=x\n").is_err());
        assert!(RunConfig::parse("epochs=5\npatience=9\n").is_err());
        assert!(RunConfig::parse("train_ratio=0.9\n").is_err());
        assert!(RunConfig::parse("mystery=1\n").is_err());
    }
}
