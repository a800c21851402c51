use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctdg::autodiff::Checkpoint;
use ctdg::config::{parse_preset, RunConfig, Task};
use ctdg::error::CtdgError;
use ctdg::eval::{common_neighbor_ratio, confusion_analysis, NegativeStrategy};
use ctdg::graph::{
    build_neighbor_index, chronological_split, generate_synthetic, load_events,
    load_node_features, save_events, SynthConfig, TemporalGraph,
};
use ctdg::model::{pair_sequences, AblationFlags, DyGFormerHyper, GraphContext, ModelParams};
use ctdg::pipeline::{
    best_edgebank, content_hash, evaluate_link_prediction, grad_check_full_model, mean_std,
    run_edgebank, train_link_prediction, train_node_classifier, EvalSplit,
};

#[derive(Parser)]
#[command(name = "ctdg", about = "Continuous-time dynamic graph learning engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the model (or the node classifier on a saved backbone).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the negative-sampling strategy (rnd|hist|ind).
        #[arg(long)]
        strategy: Option<String>,
        /// Sequence-length preset from the ladder, e.g. 512&16.
        #[arg(long)]
        preset: Option<String>,
        /// Disable a component: ncoe, te, mixsd, or enable sepno.
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Evaluate a checkpoint on the validation or test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<String>,
        /// val or test (default test).
        #[arg(long)]
        split: Option<String>,
    },
    /// Run the non-trainable edge-memory baseline variants.
    Edgebank {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Verify model gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare two checkpoints link by link (changed-link and
    /// common-neighbor diagnostics).
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic event stream from a synth-spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: category={} {}", e.category(), e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    strategy: Option<&str>,
    preset: Option<&str>,
    ablate: &[String],
) -> Result<RunConfig, CtdgError> {
    let text = fs::read_to_string(path)?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = strategy {
        cfg.strategy = NegativeStrategy::parse(s)?;
    }
    if let Some(p) = preset {
        let (l, ps) = parse_preset(p)?;
        cfg.hyper.max_len = l;
        cfg.hyper.patch_size = ps;
    }
    for a in ablate {
        match a.as_str() {
            "ncoe" => cfg.hyper.flags.use_ncoe = false,
            "te" => cfg.hyper.flags.use_te = false,
            "mixsd" => cfg.hyper.flags.mix_sequences = false,
            "sepno" => cfg.hyper.flags.sep_no = true,
            other => {
                return Err(CtdgError::Config(format!(
                    "unknown ablation `{other}` (expected ncoe, te, mixsd, or sepno)"
                )))
            }
        }
    }
    Ok(cfg)
}

fn load_graph(cfg: &RunConfig) -> Result<TemporalGraph, CtdgError> {
    let mut g = load_events(fs::File::open(&cfg.data)?)?;
    if let Some(nf) = &cfg.node_features {
        load_node_features(fs::File::open(nf)?, &mut g)?;
    }
    Ok(g)
}

fn write_manifest(cfg: &RunConfig, extra: &[(String, String)]) -> Result<(), CtdgError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut paths: Vec<&Path> = vec![cfg.data.as_path()];
    if let Some(nf) = &cfg.node_features {
        paths.push(nf.as_path());
    }
    let hash = content_hash(&paths)?;
    let mut text = cfg.resolved_text();
    text.push_str(&format!("input_hash={hash}\n"));
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(cfg.out_dir.join("manifest.txt"), text)?;
    Ok(())
}

fn append_metrics(cfg: &RunConfig, lines: &[String]) -> Result<(), CtdgError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("metrics.csv");
    let mut existing = fs::read_to_string(&path).unwrap_or_default();
    for l in lines {
        existing.push_str(l);
        existing.push('\n');
    }
    fs::write(path, existing)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CtdgError> {
    match cli.cmd {
        Cmd::Train {
            config,
            seed,
            strategy,
            preset,
            ablate,
        } => {
            let cfg = load_config(&config, seed, strategy.as_deref(), preset.as_deref(), &ablate)?;
            let g = load_graph(&cfg)?;
            let split = chronological_split(&g, cfg.ratios)?;
            fs::create_dir_all(&cfg.out_dir)?;

            match cfg.task {
                Task::EdgeBank => return run_edgebank_cmd(&cfg, &g, &split),
                Task::NodeClassification => {
                    let ckpt_path = cfg.checkpoint.clone().ok_or_else(|| {
                        CtdgError::Config(
                            "node_classification training needs checkpoint= (the backbone)".into(),
                        )
                    })?;
                    let backbone = ModelParams::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
                    let mut lines = Vec::new();
                    let mut aucs = Vec::new();
                    for &s in &cfg.seeds {
                        let out = train_node_classifier(&backbone, &g, &split, &cfg, s)?;
                        let path = cfg.out_dir.join(format!("node_classifier_seed{s}.bin"));
                        out.params.to_checkpoint().save(&path)?;
                        lines.push(format!("val,-,node_auc,{},{s}", out.best_val_auc));
                        lines.push(format!("test,-,node_auc,{},{s}", out.test_auc));
                        println!("seed {s}: node classification test AUC {:.6}", out.test_auc);
                        aucs.push(out.test_auc);
                    }
                    let (m, sd) = mean_std(&aucs);
                    lines.push(format!("test,-,node_auc_mean,{m},-"));
                    lines.push(format!("test,-,node_auc_std,{sd},-"));
                    println!("node classification test AUC: {m:.6} +/- {sd:.6}");
                    append_metrics(&cfg, &lines)?;
                    write_manifest(&cfg, &[("command".into(), "train".into())])?;
                    return Ok(());
                }
                Task::LinkPrediction => {}
            }

            let mut lines = Vec::new();
            let mut test_aps = Vec::new();
            let mut test_aucs = Vec::new();
            for &s in &cfg.seeds {
                let out = train_link_prediction(&g, &split, &cfg, s)?;
                for l in &out.log {
                    lines.push(format!("{l},{s}"));
                }
                let path = cfg.out_dir.join(format!("checkpoint_seed{s}.bin"));
                out.params.to_checkpoint().save(&path)?;
                lines.extend(
                    out.best_val
                        .log_lines("val", cfg.strategy.name(), s)
                        .into_iter(),
                );
                let tensors = out.params.tensors();
                let test = evaluate_link_prediction(
                    &out.params,
                    &tensors,
                    &g,
                    &split,
                    EvalSplit::Test,
                    cfg.strategy,
                    &cfg,
                    s,
                )?;
                lines.extend(test.report.log_lines("test", cfg.strategy.name(), s));
                if let Some(ind) = test.inductive {
                    lines.extend(ind.log_lines("test_inductive", cfg.strategy.name(), s));
                }
                if let Some(a) = test.audit {
                    lines.push(format!(
                        "test,{},audit_violations,{},{s}",
                        cfg.strategy.name(),
                        a.violations
                    ));
                }
                println!(
                    "seed {s}: best epoch {}, val AP {:.6}, test AP {:.6}, test AUC {:.6}",
                    out.best_epoch, out.best_val.ap, test.report.ap, test.report.auc_roc
                );
                test_aps.push(test.report.ap);
                test_aucs.push(test.report.auc_roc);
            }
            let (ap_m, ap_s) = mean_std(&test_aps);
            let (auc_m, auc_s) = mean_std(&test_aucs);
            lines.push(format!("test,{},ap_mean,{ap_m},-", cfg.strategy.name()));
            lines.push(format!("test,{},ap_std,{ap_s},-", cfg.strategy.name()));
            lines.push(format!("test,{},auc_mean,{auc_m},-", cfg.strategy.name()));
            lines.push(format!("test,{},auc_std,{auc_s},-", cfg.strategy.name()));
            println!("test AP: {ap_m:.6} +/- {ap_s:.6}");
            println!("test AUC: {auc_m:.6} +/- {auc_s:.6}");
            append_metrics(&cfg, &lines)?;
            write_manifest(&cfg, &[("command".into(), "train".into())])?;
            Ok(())
        }

        Cmd::Evaluate {
            config,
            checkpoint,
            seed,
            strategy,
            split,
        } => {
            let cfg = load_config(&config, seed, strategy.as_deref(), None, &[])?;
            let ckpt_path = checkpoint
                .or_else(|| cfg.checkpoint.clone())
                .ok_or_else(|| CtdgError::Config("evaluate needs --checkpoint".into()))?;
            let params = ModelParams::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
            let g = load_graph(&cfg)?;
            let split_view = chronological_split(&g, cfg.ratios)?;
            let which = match split.as_deref() {
                None | Some("test") => EvalSplit::Test,
                Some("val") => EvalSplit::Val,
                Some(other) => {
                    return Err(CtdgError::Config(format!("unknown split `{other}`")))
                }
            };
            let s = cfg.seeds[0];
            let tensors = params.tensors();
            let eval = evaluate_link_prediction(
                &params, &tensors, &g, &split_view, which, cfg.strategy, &cfg, s,
            )?;
            let mut lines = eval.report.log_lines(which.name(), cfg.strategy.name(), s);
            if let Some(ind) = eval.inductive {
                lines.extend(ind.log_lines(
                    &format!("{}_inductive", which.name()),
                    cfg.strategy.name(),
                    s,
                ));
            }
            if let Some(a) = eval.audit {
                lines.push(format!(
                    "{},{},audit_violations,{},{s}",
                    which.name(),
                    cfg.strategy.name(),
                    a.violations
                ));
            }
            for l in &lines {
                println!("{l}");
            }
            append_metrics(&cfg, &lines)?;
            Ok(())
        }

        Cmd::Edgebank {
            config,
            seed,
            strategy,
        } => {
            let cfg = load_config(&config, seed, strategy.as_deref(), None, &[])?;
            let g = load_graph(&cfg)?;
            let split = chronological_split(&g, cfg.ratios)?;
            run_edgebank_cmd(&cfg, &g, &split)
        }

        Cmd::Gradcheck { eps, seed } => {
            // the standing small configuration for gradient verification
            let hyper = DyGFormerHyper {
                d_n: 0,
                d_e: 0,
                d_t: 4,
                d_c: 4,
                d: 4,
                d_out: 8,
                heads: 2,
                layers: 2,
                max_len: 8,
                patch_size: 2,
                dropout: 0.0,
                flags: AblationFlags::default(),
            };
            let g = generate_synthetic(
                &SynthConfig {
                    num_nodes: 10,
                    num_events: 60,
                    recurrence_bias: 0.6,
                    d_e: 0,
                    d_n: 0,
                    seed: 0,
                },
                seed,
            )?;
            let t_end = g.events.last().unwrap().timestamp;
            let items = vec![
                ((0usize, 1usize, t_end + 1.0), 1.0),
                ((2, 3, t_end + 1.0), 0.0),
                ((4, 5, t_end + 2.0), 1.0),
            ];
            let report = grad_check_full_model(&hyper, &g, &items, seed, eps)?;
            println!(
                "gradcheck: max relative error {:.3e} over {} coordinates ({} kinks skipped)",
                report.max_rel_err, report.checked, report.skipped
            );
            if report.max_rel_err > 1e-4 {
                return Err(CtdgError::Eval(format!(
                    "gradient check failed: {:.3e} > 1e-4",
                    report.max_rel_err
                )));
            }
            Ok(())
        }

        Cmd::Analyze {
            config,
            checkpoint_a,
            checkpoint_b,
            seed,
            strategy,
            out,
        } => {
            let cfg = load_config(&config, seed, strategy.as_deref(), None, &[])?;
            let pa = ModelParams::from_checkpoint(&Checkpoint::load(&checkpoint_a)?)?;
            let pb = ModelParams::from_checkpoint(&Checkpoint::load(&checkpoint_b)?)?;
            let g = load_graph(&cfg)?;
            let split = chronological_split(&g, cfg.ratios)?;
            let s = cfg.seeds[0];
            let ta = pa.tensors();
            let tb = pb.tensors();
            // same seed, so both models score identical positive/negative sets
            let ea = evaluate_link_prediction(
                &pa, &ta, &g, &split, EvalSplit::Test, cfg.strategy, &cfg, s,
            )?;
            let eb = evaluate_link_prediction(
                &pb, &tb, &g, &split, EvalSplit::Test, cfg.strategy, &cfg, s,
            )?;

            let index = build_neighbor_index(&g);
            let ctx = GraphContext {
                graph: &g,
                index: &index,
            };
            let mut all_cnrs = Vec::new();
            for &(u, v, t) in &ea.positives {
                let (su, sv) = pair_sequences(&ctx, u, v, t, &pb.hyper)?;
                all_cnrs.push(common_neighbor_ratio(&su, &sv));
            }
            all_cnrs.extend(std::iter::repeat(None).take(ea.neg_scores.len()));
            let mut scores_a = ea.pos_scores.clone();
            scores_a.extend(ea.neg_scores.iter());
            let mut scores_b = eb.pos_scores.clone();
            scores_b.extend(eb.neg_scores.iter());
            let mut labels = vec![1u8; ea.pos_scores.len()];
            labels.extend(std::iter::repeat(0u8).take(ea.neg_scores.len()));

            let table = confusion_analysis(&scores_a, &scores_b, &labels, 0.5, &all_cnrs)?;
            let csv = table.to_csv();
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }

        Cmd::Synth { spec, out, seed } => {
            let text = fs::read_to_string(&spec)?;
            let synth = SynthConfig::parse(&text)?;
            let g = generate_synthetic(&synth, seed.unwrap_or(synth.seed))?;
            let mut buf = Vec::new();
            save_events(&g, &mut buf)?;
            fs::write(&out, buf)?;
            println!(
                "wrote {} events over {} nodes to {}",
                g.events.len(),
                g.num_nodes,
                out.display()
            );
            Ok(())
        }
    }
}

fn run_edgebank_cmd(
    cfg: &RunConfig,
    g: &TemporalGraph,
    split: &ctdg::graph::SplitView,
) -> Result<(), CtdgError> {
    let s = cfg.seeds[0];
    let results = run_edgebank(g, split, cfg, s)?;
    let mut lines = Vec::new();
    for (variant, report) in &results {
        lines.push(format!(
            "test,{},ap_{},{},{s}",
            cfg.strategy.name(),
            variant.name(),
            report.ap
        ));
        lines.push(format!(
            "test,{},auc_{},{},{s}",
            cfg.strategy.name(),
            variant.name(),
            report.auc_roc
        ));
        println!(
            "{}: AP {:.6}, AUC {:.6}",
            variant.name(),
            report.ap,
            report.auc_roc
        );
    }
    let (best_variant, best) = best_edgebank(&results);
    lines.push(format!(
        "test,{},best_variant,{},{s}",
        cfg.strategy.name(),
        best_variant.name()
    ));
    lines.push(format!("test,{},ap_best,{},{s}", cfg.strategy.name(), best.ap));
    println!("best variant: {} (AP {:.6})", best_variant.name(), best.ap);
    append_metrics(cfg, &lines)?;
    write_manifest(cfg, &[("command".into(), "edgebank".into())])?;
    Ok(())
}
