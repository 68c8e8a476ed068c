use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use svcgraph_core::gae::{loss_csv, load_model, save_model, train, Model, ModelConfig};
use svcgraph_core::graph::{GraphInput, GraphSnapshot, Profile, ServiceId};
use svcgraph_core::inject::{run_injection, InjectionConfig, DEFAULT_CANDIDATE_CAP};
use svcgraph_core::scoring::{
    build_reference, fanout_diff, fanout_ratios, label_separation, pca_project, score_snapshot, ReferenceEmbedding,
    DEFAULT_TAU,
};
use svcgraph_core::sim::{generate_stream, parse_scenario, simulate_corpus};
use svcgraph_core::telemetry::{
    aggregate_minutes_with, load_corpus, read_csv, save_corpus, snapshot_file_name, write_atomic, write_csv, Partition,
    SnapshotCorpus,
};
use svcgraph_core::Matrix;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, DiagnoseArgs, IngestArgs, InjectArgs, PcaArgs, ScoreArgs, SimulateArgs, TrainArgs};

type CmdResult = Result<(), CliError>;

pub fn run(cli: Cli) -> CmdResult {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(&mut cfg, cli.seed, cli.out, a),
        Command::Ingest(a) => ingest(&mut cfg, cli.out, a),
        Command::Train(a) => train_cmd(&mut cfg, cli.seed, cli.out, a),
        Command::Score(a) => score(&mut cfg, cli.out, a),
        Command::Diagnose(a) => diagnose(&mut cfg, cli.out, a),
        Command::InjectEval(a) => inject_eval(&mut cfg, cli.seed, cli.out, a),
        Command::Pca(a) => pca(&mut cfg, cli.out, a),
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(anyhow!(msg))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Usage)
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(CliError::Internal)?;
    }
    write_atomic(path, contents.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Internal)
}

fn print_counts(corpus: &SnapshotCorpus) {
    println!("services\t{}", corpus.registry.len());
    for (profile, count) in corpus.count_by_profile() {
        println!("{profile}\t{count}");
    }
    for part in [Partition::Train, Partition::Reference, Partition::Evaluate] {
        println!("partition:{part}\t{}", corpus.partition(part).count());
    }
}

fn simulate(cfg: &mut RunConfig, seed: Option<u64>, out: Option<PathBuf>, args: SimulateArgs) -> CmdResult {
    let scenario_path = cfg.path("scenario", args.scenario)?;
    let seed = cfg.optional("seed", seed)?;
    let out = cfg.path("out", out)?;
    let csv = cfg.optional_path("csv", args.csv);
    cfg.log("simulate");

    let file = parse_scenario(&read_text(&scenario_path)?, seed)
        .with_context(|| format!("scenario {}", scenario_path.display()))
        .map_err(CliError::Usage)?;
    eprintln!("scenario seed = {}", file.scenario.seed);
    let corpus = simulate_corpus(&file.scenario, file.duration_minutes)?;
    save_corpus(&corpus, &out).map_err(CliError::internal)?;
    if let Some(csv) = csv {
        let records = generate_stream(&file.scenario, file.duration_minutes)?;
        write_file(&csv, &write_csv(&records))?;
    }
    println!("snapshots\t{}", corpus.snapshots.len());
    print_counts(&corpus);
    Ok(())
}

fn parse_window(text: &str) -> Result<(i64, i64, Profile), CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || usage(format!("window {text:?}: expected start_minute,end_minute,profile"));
    let [start, end, profile] = parts[..] else {
        return Err(bad());
    };
    let start: i64 = start.parse().map_err(|_| bad())?;
    let end: i64 = end.parse().map_err(|_| bad())?;
    if start >= end {
        return Err(bad());
    }
    Ok((start, end, profile.parse()?))
}

fn ingest(cfg: &mut RunConfig, out: Option<PathBuf>, args: IngestArgs) -> CmdResult {
    let input = cfg.path("input", args.input)?;
    let default_profile: Profile = cfg.value("profile", args.profile, "baseline".to_owned())?.parse()?;
    let windows = cfg
        .list("window", args.window)
        .iter()
        .map(|w| parse_window(w))
        .collect::<Result<Vec<_>, _>>()?;
    let out = cfg.path("out", out)?;
    cfg.log("ingest");

    let file = File::open(&input)
        .with_context(|| format!("opening {}", input.display()))
        .map_err(CliError::Usage)?;
    let parsed = read_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", input.display()))
        .map_err(CliError::Usage)?;
    if !parsed.skipped.is_empty() {
        eprintln!("skipped {} malformed lines", parsed.skipped.len());
        for (line, reason) in parsed.skipped.iter().take(5) {
            eprintln!("  line {line}: {reason}");
        }
    }
    let mut registry = svcgraph_core::ServiceRegistry::new();
    let profile_of = |minute: i64| {
        windows
            .iter()
            .find(|(s, e, _)| *s <= minute && minute < *e)
            .map_or(default_profile, |w| w.2)
    };
    let snapshots = aggregate_minutes_with(&parsed.records, &mut registry, profile_of)?;
    if snapshots.is_empty() {
        return Err(usage(format!("{}: no valid records", input.display())));
    }
    let corpus = SnapshotCorpus::with_auto_partition(registry, snapshots)?;
    save_corpus(&corpus, &out).map_err(CliError::internal)?;
    println!("records\t{}", parsed.records.len());
    println!("skipped\t{}", parsed.skipped.len());
    println!("snapshots\t{}", corpus.snapshots.len());
    print_counts(&corpus);
    Ok(())
}

fn train_cmd(cfg: &mut RunConfig, seed: Option<u64>, out: Option<PathBuf>, args: TrainArgs) -> CmdResult {
    let corpus_dir = cfg.path("corpus", args.corpus)?;
    let out = cfg.path("out", out)?;
    let corpus = load_corpus(&corpus_dir)?;
    let defaults = ModelConfig::for_registry(corpus.registry.len());
    let m = args.model;
    let config = ModelConfig {
        n: defaults.n,
        hidden_dim: cfg.value("hidden_dim", m.hidden_dim, defaults.hidden_dim)?,
        embed_dim: cfg.value("embed_dim", m.embed_dim, defaults.embed_dim)?,
        epochs: cfg.value("epochs", m.epochs, defaults.epochs)?,
        learning_rate: cfg.value("learning_rate", m.learning_rate, defaults.learning_rate)?,
        beta1: cfg.value("beta1", None, defaults.beta1)?,
        beta2: cfg.value("beta2", None, defaults.beta2)?,
        eps: cfg.value("eps", None, defaults.eps)?,
        batch_size: cfg.value("batch_size", m.batch_size, defaults.batch_size)?,
        seed: cfg.value("seed", seed, defaults.seed)?,
    };
    cfg.log("train");

    let inputs = corpus.inputs(Partition::Train)?;
    let (params, report) = train(&inputs, &config)?;
    let model = Model {
        config,
        params,
        registry_hash: corpus.registry.fingerprint(),
    };
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(CliError::Internal)?;
    save_model(&out.join("model.txt"), &model).map_err(CliError::internal)?;
    write_file(&out.join("loss.csv"), &loss_csv(&report))?;

    println!("epochs\t{}", report.epoch_mean.len());
    if let (Some(first), Some(last)) = (report.epoch_mean.first(), report.epoch_mean.last()) {
        println!("loss_first_epoch\t{first:e}");
        println!("loss_last_epoch\t{last:e}");
    }
    println!("profile\tcount\tmin\tmedian\tmax");
    for (profile, s) in report.summaries() {
        println!("{profile}\t{}\t{:e}\t{:e}\t{:e}", s.count, s.min, s.median, s.max);
    }
    Ok(())
}

enum Selector {
    Partition(Partition),
    Minutes(i64, i64),
}

fn parse_selector(text: &str) -> Result<Selector, CliError> {
    if let Some(range) = text.strip_prefix("minutes:") {
        let bad = || usage(format!("selector {text:?}: expected minutes:START-END"));
        let (a, b) = range.split_once('-').ok_or_else(bad)?;
        let a: i64 = a.trim().parse().map_err(|_| bad())?;
        let b: i64 = b.trim().parse().map_err(|_| bad())?;
        return Ok(Selector::Minutes(a.min(b), a.max(b)));
    }
    text.parse().map(Selector::Partition).map_err(usage)
}

fn selected<'a>(corpus: &'a SnapshotCorpus, sel: &Selector) -> Vec<&'a GraphSnapshot> {
    match *sel {
        Selector::Partition(p) => corpus.partition(p).collect(),
        Selector::Minutes(a, b) => corpus
            .snapshots
            .iter()
            .filter(|s| a <= s.timestamp && s.timestamp <= b)
            .collect(),
    }
}

/// Corpus, model checked against its registry, and the reference embedding.
fn load_scoring(corpus_dir: &Path, model_path: &Path) -> Result<(SnapshotCorpus, Model, ReferenceEmbedding), CliError> {
    let corpus = load_corpus(corpus_dir)?;
    let model = load_model(model_path, &corpus.registry)?;
    let reference = build_reference(&model.params, &corpus.inputs(Partition::Reference)?)?;
    Ok((corpus, model, reference))
}

fn score(cfg: &mut RunConfig, out: Option<PathBuf>, args: ScoreArgs) -> CmdResult {
    let corpus_dir = cfg.path("corpus", args.corpus)?;
    let model_path = cfg.path("model", args.model)?;
    let select = cfg.value("select", args.select, "evaluate".to_owned())?;
    let tau = cfg.value("tau", args.tau, DEFAULT_TAU)?;
    let out = cfg.path("out", out)?;
    cfg.log("score");
    let selector = parse_selector(&select)?;

    let (corpus, model, reference) = load_scoring(&corpus_dir, &model_path)?;
    let n = corpus.registry.len();
    let snaps = selected(&corpus, &selector);
    if snaps.is_empty() {
        return Err(usage(format!("selector {select:?} matches no snapshots")));
    }
    let mut flagged = vec![0usize; n];
    let mut scored = vec![0usize; n];
    let mut presence: BTreeMap<usize, usize> = BTreeMap::new();
    for snap in &snaps {
        let input = GraphInput::from_snapshot(snap, n)?;
        let report = score_snapshot(&model.params, &input, &reference, tau)?;
        for (s, _) in report.scored() {
            scored[s.0] += 1;
        }
        for s in report.flagged() {
            flagged[s.0] += 1;
        }
        for (s, _) in &report.presence_anomalies {
            *presence.entry(s.0).or_default() += 1;
        }
        write_file(
            &out.join(format!("score-{:010}.tsv", snap.timestamp)),
            &report.to_tsv(&corpus.registry),
        )?;
    }

    let mut summary = String::from("service_name\tflagged_minutes\tscored_minutes\tflag_rate\tpresence_minutes\n");
    for (id, name) in corpus.registry.iter() {
        let i = id.0;
        let rate = if scored[i] > 0 {
            format!("{:.4}", flagged[i] as f64 / scored[i] as f64)
        } else {
            "NA".to_owned()
        };
        summary.push_str(&format!(
            "{name}\t{}\t{}\t{rate}\t{}\n",
            flagged[i],
            scored[i],
            presence.get(&i).copied().unwrap_or(0)
        ));
    }
    write_file(&out.join("summary.tsv"), &summary)?;

    println!("snapshots_scored\t{}", snaps.len());
    println!("tau\t{tau}");
    println!("flags_total\t{}", flagged.iter().sum::<usize>());
    let mut ranked: Vec<(usize, usize)> = flagged.iter().copied().enumerate().filter(|x| x.1 > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, count) in ranked.iter().take(10) {
        println!(
            "flagged\t{}\t{count}/{}",
            corpus.registry.name(ServiceId(*i)).unwrap_or("?"),
            snaps.len()
        );
    }
    Ok(())
}

fn diagnose(cfg: &mut RunConfig, out: Option<PathBuf>, args: DiagnoseArgs) -> CmdResult {
    let corpus_dir = cfg.path("corpus", args.corpus)?;
    let service: String = cfg.required("service", args.service)?;
    let minute_a: i64 = cfg.required("minute_a", args.minute_a)?;
    let minute_b: i64 = cfg.required("minute_b", args.minute_b)?;
    let out = cfg.optional_path("out", out);
    cfg.log("diagnose");

    let corpus = load_corpus(&corpus_dir)?;
    let id = corpus
        .registry
        .id(&service)
        .ok_or_else(|| usage(format!("unknown service {service:?}")))?;
    let at = |m: i64| {
        corpus
            .snapshot_at(m)
            .ok_or_else(|| usage(format!("no snapshot at minute {m}")))
    };
    let (a, b) = (at(minute_a)?, at(minute_b)?);
    let diff = fanout_diff(a, b, id);
    let table = diff.to_tsv(&corpus.registry);
    print!("{table}");
    for (label, snap) in [("a", a), ("b", b)] {
        let shares = fanout_ratios(snap, id).incoming_share;
        let parts: Vec<String> = shares
            .iter()
            .map(|(s, share)| format!("{}={:.4}", corpus.registry.name(*s).unwrap_or("?"), share))
            .collect();
        eprintln!("incoming share at minute_{label}: {}", if parts.is_empty() { "none".into() } else { parts.join(" ") });
    }
    if let Some(out) = out {
        write_file(
            &out.join(format!("fanout-{service}-{minute_a}-{minute_b}.tsv")),
            &table,
        )?;
    }
    Ok(())
}

fn inject_eval(cfg: &mut RunConfig, seed: Option<u64>, out: Option<PathBuf>, args: InjectArgs) -> CmdResult {
    let defaults = InjectionConfig::default();
    let corpus_dir = cfg.path("corpus", args.corpus)?;
    let model_path = cfg.path("model", args.model)?;
    let config = InjectionConfig {
        path_length: cfg.value("path_length", args.path_length, defaults.path_length)?,
        pct_low: cfg.value("pct_low", args.pct_low, defaults.pct_low)?,
        pct_high: cfg.value("pct_high", args.pct_high, defaults.pct_high)?,
        seed: cfg.value("seed", seed, defaults.seed)?,
        minutes: Vec::new(),
        minute_count: cfg.value("minutes", args.minutes, defaults.minute_count)?,
        tau: cfg.value("tau", args.tau, defaults.tau)?,
        candidate_cap: cfg.value("candidate_cap", None, DEFAULT_CANDIDATE_CAP)?,
    };
    let out = cfg.path("out", out)?;
    cfg.log("inject-eval");

    let (corpus, model, reference) = load_scoring(&corpus_dir, &model_path)?;
    let outcome = run_injection(&model.params, &corpus, &reference, &config)?;
    let names: Vec<&str> = outcome
        .path
        .iter()
        .map(|s| corpus.registry.name(*s).unwrap_or("?"))
        .collect();
    for snap in &outcome.perturbed {
        write_file(&out.join("perturbed").join(snapshot_file_name(snap.timestamp)), &snap.to_text())?;
    }
    for report in &outcome.reports {
        write_file(
            &out.join("reports").join(format!("score-{:010}.tsv", report.test_timestamp)),
            &report.to_tsv(&corpus.registry),
        )?;
    }
    let mut metrics = format!(
        "path={}\nminutes={}\npct_low={}\npct_high={}\ntau={}\n",
        names.join(">"),
        outcome.truth.minutes.len(),
        config.pct_low,
        config.pct_high,
        config.tau
    );
    metrics.push_str(&outcome.metrics.to_report());
    write_file(&out.join("metrics.txt"), &metrics)?;
    print!("{metrics}");
    Ok(())
}

fn pca(cfg: &mut RunConfig, out: Option<PathBuf>, args: PcaArgs) -> CmdResult {
    let corpus_dir = cfg.path("corpus", args.corpus)?;
    let model_path = cfg.path("model", args.model)?;
    let select = cfg.value("select", args.select, "reference".to_owned())?;
    let out = cfg.optional_path("out", out);
    let csv_path = match cfg.optional_path("csv", args.csv) {
        Some(p) => p,
        None => out
            .as_ref()
            .map(|o| o.join("pca.csv"))
            .ok_or_else(|| usage("missing `csv` (pass --csv or --out)".into()))?,
    };
    cfg.log("pca");

    let (corpus, model, reference) = load_scoring(&corpus_dir, &model_path)?;
    let n = corpus.registry.len();
    let (z, present): (Matrix, Vec<bool>) = if select == "reference" {
        (reference.z_ref.clone(), reference.presence.iter().map(|&c| c > 0).collect())
    } else if let Some(m) = select.strip_prefix("minute:") {
        let minute: i64 = m
            .trim()
            .parse()
            .map_err(|_| usage(format!("selector {select:?}: expected minute:M")))?;
        let snap = corpus
            .snapshot_at(minute)
            .ok_or_else(|| usage(format!("no snapshot at minute {minute}")))?;
        let input = GraphInput::from_snapshot(snap, n)?;
        let z = svcgraph_core::gae::encode_matrix(&model.params, &input.propagation)?;
        (z, input.presence)
    } else {
        return Err(usage(format!("selector {select:?}: expected `reference` or minute:M")));
    };

    let rows: Vec<usize> = (0..n).filter(|&i| present[i]).collect();
    let sub = Matrix::from_fn(rows.len(), z.cols(), |r, c| z[(rows[r], c)]);
    let proj = pca_project(&sub, 2)?;
    let mut csv = String::from("service_name,layer_label,x,y\n");
    for (r, &i) in rows.iter().enumerate() {
        let layer = corpus
            .layers
            .as_ref()
            .map_or(String::new(), |l| l[i].to_string());
        csv.push_str(&format!(
            "{},{layer},{},{}\n",
            corpus.registry.name(ServiceId(i)).unwrap_or("?"),
            proj.coords[(r, 0)],
            proj.coords[(r, 1)]
        ));
    }
    write_file(&csv_path, &csv)?;
    println!("points\t{}", rows.len());
    println!("explained_variance\t{:.6}\t{:.6}", proj.explained[0], proj.explained[1]);
    if let Some(layers) = &corpus.layers {
        let labels: Vec<usize> = rows.iter().map(|&i| layers[i]).collect();
        let (intra, inter) = label_separation(&proj.coords, &labels);
        println!("mean_intra_layer_distance\t{intra:.6}");
        println!("mean_inter_layer_distance\t{inter:.6}");
    }
    Ok(())
}
