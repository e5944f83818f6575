use std::path::Path;

use anyhow::{bail, Context, Result};
use paydpi::crypto::{run_ablation, AblationReport, CipherSpec, Condition, TimestampPolicy};
use paydpi::dataset::{
    balance_binary, build_multiclass, class_counts, dedup, label_packets, load_ground_truth, load_jsonl, split,
    write_jsonl, ClassMap, LabeledPayload, DEFAULT_RATIOS,
};
use paydpi::eval::{evaluate_checkpoint, MetricsReport, Mode};
use paydpi::model::Checkpoint;
use paydpi::pcap::{ingest, RawPacket};
use paydpi::train::train;
use serde_json::json;

use crate::config::{overlay, resolve_columns, resolve_hyper, resolve_mode, resolve_seed, FileConfig};
use crate::manifest::{sha256_hex, RunDir};
use crate::synthetic::{make_synthetic, SyntheticSpec};
use crate::{Cli, CliError, Command};

const DEFAULT_BAND: u64 = 86_400;
const DEFAULT_FIXED_TIMESTAMP: u64 = 1_700_000_000;
pub const BUILTIN_CONDITIONS: [&str; 4] = ["plaintext", "aes256-cbc", "fernet-banded", "fernet-fixed"];

fn jsonl_bytes<T: serde::Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items)?;
    Ok(buf)
}

fn load_dataset(path: &Path) -> Result<Vec<LabeledPayload>> {
    load_jsonl(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn class_names(mode: Mode, map: Option<&ClassMap>) -> Vec<String> {
    match (mode, map) {
        (Mode::Multiclass, Some(m)) => m.names().to_vec(),
        (Mode::Multiclass, None) => (0..3).map(|i| format!("class {i}")).collect(),
        (Mode::Binary, _) => vec!["benign".into(), "malicious".into()],
    }
}

fn print_counts(data: &[LabeledPayload], names: &[String]) {
    let counts = class_counts(data);
    for (i, c) in counts.iter().enumerate() {
        let name = names.get(i).map_or_else(|| format!("label {i}"), Clone::clone);
        println!("{name:<24} {c:>8}");
    }
    println!("{:<24} {:>8}", "total", data.len());
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &file);
    let name = match &cli.command {
        Command::Ingest { .. } => "ingest",
        Command::BuildDataset { .. } => "build-dataset",
        Command::Synthetic { .. } => "synthetic",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::CryptoAblation { .. } => "crypto-ablation",
        Command::Report { .. } => "report",
    };
    let mut run = RunDir::create(&cli.out, name, argv)?;
    if let Some(cfg) = &cli.config {
        run.input(cfg)?;
    }
    match cli.command {
        Command::Ingest { pcap } => cmd_ingest(&mut run, &pcap)?,
        Command::BuildDataset { packets, truth, mode, preset, classes, time_offset } => {
            run.manifest.seed = Some(seed);
            let mode = resolve_mode(mode, &file);
            let preset = preset.or(file.dataset.preset.clone());
            let classes = classes.or(file.dataset.classes.clone());
            let time_offset = time_offset.or(file.dataset.time_offset).unwrap_or(0);
            cmd_build(&mut run, &file, &packets, &truth, mode, preset.as_deref(), classes, time_offset, seed)?
        }
        Command::Synthetic { samples, motif, min_len, max_len } => {
            run.manifest.seed = Some(seed);
            let mut spec: SyntheticSpec = overlay(&SyntheticSpec::default(), &file.synthetic, &["seed"])?;
            if let Some(s) = samples {
                spec.samples = s;
            }
            if let Some(m) = motif {
                spec.motif = hex::decode(m.trim()).map_err(|e| CliError::Usage(format!("--motif: {e}")))?;
            }
            if let Some(v) = min_len {
                spec.min_len = v;
            }
            if let Some(v) = max_len {
                spec.max_len = v;
            }
            spec.seed = seed;
            cmd_synthetic(&mut run, &spec)?
        }
        Command::Train { dataset, hyper } => {
            run.manifest.seed = Some(seed);
            let mode = resolve_mode(hyper.mode, &file);
            let (model_cfg, train_cfg) = resolve_hyper(&hyper, &file, mode, seed)?;
            run.manifest.config = json!({ "mode": mode, "model": model_cfg, "train": train_cfg, "split_ratios": DEFAULT_RATIOS });
            run.input(&dataset)?;
            let data = load_dataset(&dataset)?;
            let parts = split(&data, DEFAULT_RATIOS, seed)?;
            run.write("split/train.jsonl", &jsonl_bytes(&parts.train)?)?;
            run.write("split/test.jsonl", &jsonl_bytes(&parts.test)?)?;
            run.write("split/validation.jsonl", &jsonl_bytes(&parts.validation)?)?;
            println!("split {} / {} / {} (seed {seed})", parts.train.len(), parts.test.len(), parts.validation.len());
            let model = paydpi::model::Model::new(model_cfg)?;
            let outcome = train(model, &parts, &train_cfg).context("train")?;
            run.write("checkpoint.bin", &outcome.checkpoint.to_bytes())?;
            if let Some((epoch, best)) = &outcome.best {
                run.write("best.bin", &best.to_bytes())?;
                println!("best validation epoch {epoch}");
            }
            let mut steps = Vec::new();
            outcome.log.write_steps(&mut steps)?;
            run.write("train_steps.jsonl", &steps)?;
            let table = outcome.log.epoch_table();
            run.write("train_epochs.txt", table.as_bytes())?;
            print!("{table}");
        }
        Command::Evaluate { checkpoint, dataset, mode, batch_size, method } => {
            let mode = resolve_mode(mode, &file);
            run.manifest.config = json!({ "mode": mode, "batch_size": batch_size, "method": method });
            run.input(&checkpoint)?;
            run.input(&dataset)?;
            let ck_bytes = std::fs::read(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let ck = Checkpoint::from_bytes(&ck_bytes).with_context(|| format!("loading {}", checkpoint.display()))?;
            let data = load_dataset(&dataset)?;
            let mut report = evaluate_checkpoint(&ck, &data, mode, batch_size).context("evaluate")?;
            report.checkpoint_id = Some(sha256_hex(&ck_bytes));
            report.dataset_id = Some(sha256_hex(&std::fs::read(&dataset)?));
            let text = report.render_text(&method);
            run.write("report.json", report.to_json().as_bytes())?;
            run.write("report.txt", text.as_bytes())?;
            print!("{text}");
        }
        Command::CryptoAblation { dataset, conditions, equalize_lengths, band, fixed_timestamp, hyper } => {
            run.manifest.seed = Some(seed);
            let mode = resolve_mode(hyper.mode, &file);
            let (model_cfg, train_cfg) = resolve_hyper(&hyper, &file, mode, seed)?;
            let equalize = equalize_lengths || file.ablation.equalize_lengths.unwrap_or(false);
            let band = band.or(file.ablation.band).unwrap_or(DEFAULT_BAND);
            let fixed = fixed_timestamp.or(file.ablation.fixed_timestamp).unwrap_or(DEFAULT_FIXED_TIMESTAMP);
            let names = conditions
                .or(file.ablation.conditions.clone())
                .unwrap_or_else(|| BUILTIN_CONDITIONS.iter().map(|s| s.to_string()).collect());
            let conds = build_conditions(&names, &file, seed, equalize, band, fixed)?;
            run.manifest.config = json!({
                "mode": mode,
                "model": model_cfg,
                "train": train_cfg,
                "conditions": conds.iter().map(|c| json!({
                    "name": c.name,
                    "spec": c.spec.as_ref().map(CipherSpec::redacted),
                })).collect::<Vec<_>>(),
            });
            run.input(&dataset)?;
            let data = load_dataset(&dataset)?;
            let report = run_ablation(&data, &conds, &model_cfg, &train_cfg, seed, mode).context("crypto-ablation")?;
            let table = report.render_table();
            run.write("ablation.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
            run.write("ablation.txt", table.as_bytes())?;
            print!("{table}");
        }
        Command::Report { inputs, names } => cmd_report(&mut run, &inputs, names.as_deref())?,
    }
    run.finish()?;
    Ok(())
}

fn cmd_ingest(run: &mut RunDir, pcaps: &[std::path::PathBuf]) -> Result<()> {
    for p in pcaps {
        run.input(p)?;
    }
    let (packets, stats) = ingest(pcaps).context("ingest")?;
    run.write("packets.jsonl", &jsonl_bytes(&packets)?)?;
    run.write("capture_stats.json", serde_json::to_string_pretty(&stats)?.as_bytes())?;
    println!(
        "frames {}  tcp {}  udp {}  no-payload {}  other-protocol {}  malformed {}",
        stats.total_frames,
        stats.tcp_with_payload,
        stats.udp_with_payload,
        stats.discarded_no_payload,
        stats.discarded_other_protocol,
        stats.malformed
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_build(
    run: &mut RunDir,
    file: &FileConfig,
    packets: &Path,
    truth: &Path,
    mode: Mode,
    preset: Option<&str>,
    classes: Option<Vec<String>>,
    time_offset: i64,
    seed: u64,
) -> Result<()> {
    let columns = resolve_columns(file, preset)?;
    let map = match (classes, preset) {
        (Some(c), _) => Some(ClassMap::new(c)?),
        (None, Some("unsw")) => Some(ClassMap::unsw_nb15()),
        (None, Some("ciciot")) => Some(ClassMap::cic_iot23()),
        (None, Some(other)) => bail!(CliError::Usage(format!("unknown dataset preset {other:?} (unsw, ciciot)"))),
        (None, None) => None,
    };
    match (&map, mode) {
        (None, Mode::Multiclass) => bail!(CliError::Usage("multiclass needs --preset or --classes".into())),
        (Some(m), Mode::Multiclass) if m.len() != mode.num_labels() => {
            bail!(CliError::Usage(format!("multiclass needs {} classes, got {}", mode.num_labels(), m.len())))
        }
        _ => {}
    }
    run.manifest.config = json!({
        "mode": mode,
        "preset": preset,
        "classes": map.as_ref().map(ClassMap::names),
        "columns": columns,
        "time_offset": time_offset,
    });
    run.input(packets)?;
    run.input(truth)?;
    let raw: Vec<RawPacket> = load_jsonl(packets).with_context(|| format!("loading packets {}", packets.display()))?;
    let gt = load_ground_truth(truth, &columns).with_context(|| format!("loading ground truth {}", truth.display()))?;
    let unique = dedup(raw.iter().cloned());
    let labeling = label_packets(&unique, &gt.records, time_offset);
    let malicious = labeling.payloads.iter().filter(|p| p.label == 1).count();
    for a in &labeling.ambiguous {
        eprintln!("warning: packet {} matches {:?} and {:?}; kept {:?}", a.packet_index, a.chosen, a.others, a.chosen);
    }
    let data = match mode {
        Mode::Binary => balance_binary(&labeling.payloads, seed)?,
        Mode::Multiclass => build_multiclass(&labeling.payloads, map.as_ref().expect("checked above"), seed)?,
    };
    let summary = json!({
        "packets": raw.len(),
        "unique_payloads": unique.len(),
        "malicious": malicious,
        "benign": unique.len() - malicious,
        "ambiguous": labeling.ambiguous.iter().map(|a| json!({
            "packet_index": a.packet_index, "chosen": a.chosen, "others": a.others,
        })).collect::<Vec<_>>(),
        "truth_records": gt.records.len(),
        "truth_rows_skipped": gt.skipped_rows,
        "class_counts": class_counts(&data),
    });
    run.write("dataset.jsonl", &jsonl_bytes(&data)?)?;
    run.write("labeling.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    println!("packets {}  unique {}  malicious {}  benign {}", raw.len(), unique.len(), malicious, unique.len() - malicious);
    print_counts(&data, &class_names(mode, map.as_ref()));
    Ok(())
}

fn cmd_synthetic(run: &mut RunDir, spec: &SyntheticSpec) -> Result<()> {
    run.manifest.config = serde_json::to_value(spec)?;
    let data = make_synthetic(spec)?;
    run.write("dataset.jsonl", &jsonl_bytes(&data)?)?;
    print_counts(&data, &class_names(Mode::Binary, None));
    Ok(())
}

pub fn build_conditions(
    names: &[String],
    file: &FileConfig,
    seed: u64,
    equalize: bool,
    band: u64,
    fixed: u64,
) -> Result<Vec<Condition>> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let spec = match name.as_str() {
            "plaintext" => None,
            "aes256-cbc" => Some(CipherSpec::aes256(seed)),
            "fernet-banded" => Some(CipherSpec::fernet(seed, TimestampPolicy::PerClassOffset { base: None, band })),
            "fernet-fixed" => Some(CipherSpec::fernet(seed, TimestampPolicy::Fixed { timestamp: fixed })),
            custom => {
                let table = file
                    .ablation
                    .custom
                    .iter()
                    .find(|t| t.get("name").and_then(toml::Value::as_str) == Some(custom))
                    .ok_or_else(|| CliError::Usage(format!("unknown condition {custom:?}")))?;
                let base = CipherSpec { equalize_lengths: equalize, ..CipherSpec::aes256(seed) };
                let spec: CipherSpec = overlay(&base, table, &["name"])?;
                spec.validate()?;
                out.push(Condition::encrypted(custom, spec));
                continue;
            }
        };
        out.push(match spec {
            None => Condition::plaintext(),
            Some(s) => Condition::encrypted(name.clone(), CipherSpec { equalize_lengths: equalize, ..s }),
        });
    }
    Ok(out)
}

fn cmd_report(run: &mut RunDir, inputs: &[std::path::PathBuf], names: Option<&[String]>) -> Result<()> {
    let mut out = MetricsReport::table_header();
    out.push('\n');
    for (i, path) in inputs.iter().enumerate() {
        run.input(path)?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if value.get("rows").is_some() {
            let ablation: AblationReport = serde_json::from_value(value)?;
            for row in &ablation.rows {
                out.push_str(&row.report.table_row(&row.condition));
                out.push('\n');
            }
        } else {
            let report: MetricsReport =
                serde_json::from_value(value).with_context(|| format!("{} is not a metrics report", path.display()))?;
            let name = names.and_then(|n| n.get(i)).cloned().unwrap_or_else(|| {
                path.file_stem().map_or_else(|| format!("report {i}"), |s| s.to_string_lossy().into_owned())
            });
            out.push_str(&report.table_row(&name));
            out.push('\n');
        }
    }
    run.write("report.txt", out.as_bytes())?;
    print!("{out}");
    Ok(())
}
