//! Subcommand implementations. Every artifact embeds the resolved run
//! configuration for reproducibility.

use crate::settings::Settings;
use anyhow::{bail, Context, Result};
use narkit::astdep::{self, AstTree, MiniGrammar, NodeTypeIndex};
use narkit::corpus::{self, build_vocab, Vocabulary};
use narkit::infer;
use narkit::nnet::{checkpoint, ModelDims, ModelParams};
use narkit::preprocess::{preprocess as run_preprocess, read_records, write_records};
use narkit::trainer::{train as run_train, TrainError};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn gen(seed: u64, count: usize, out: &Path) -> Result<()> {
    let grammar = MiniGrammar::new();
    let pairs = corpus::generate_toy_corpus(seed, count, &grammar);
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    corpus::write_jsonl(std::io::BufWriter::new(file), &pairs)?;
    eprintln!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

pub fn preprocess(
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    max_repair_length: Option<usize>,
    max_seq_len: Option<usize>,
    min_freq: Option<usize>,
) -> Result<()> {
    let mut settings = Settings::from_defaults();
    if let Some(path) = config {
        settings.load_file(path)?;
    }
    settings.put_opt("max_repair_length", max_repair_length);
    settings.put_opt("max_seq_len", max_seq_len);
    settings.put_opt("min_freq", min_freq);

    let grammar = MiniGrammar::new();
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let pairs = corpus::read_jsonl(std::io::BufReader::new(file))?;
    let (records, index, stats) = run_preprocess(
        &pairs,
        &grammar,
        settings.get_usize("max_repair_length")?,
        settings.get_usize("max_seq_len")?,
    );
    let sequences: Vec<Vec<String>> =
        records.iter().flat_map(|r| [r.buggy.clone(), r.fixed.clone()]).collect();
    let vocab = build_vocab(
        sequences.iter().map(|v| v.as_slice()),
        settings.get_usize("min_freq")?,
    );

    fs::create_dir_all(out)?;
    let records_file = fs::File::create(out.join("records.jsonl"))?;
    write_records(std::io::BufWriter::new(records_file), &records)?;
    fs::write(out.join("vocab.txt"), vocab.to_text())?;
    fs::write(out.join("node_types.txt"), index.to_text())?;
    let meta = serde_json::json!({
        "stats": stats,
        "vocab_size": vocab.len(),
        "node_types": index.len(),
        "config": settings.as_json(),
    });
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    eprintln!(
        "kept {} pairs (parse failures {}, length overflows {}, too long {}, empty {})",
        stats.kept, stats.parse_failures, stats.length_overflows, stats.too_long, stats.empty
    );
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub peak_lr: Option<f64>,
    pub d_model: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub decoder_split: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub dropout: Option<f64>,
    pub stop_at_val_exact: Option<f64>,
}

fn load_data_dir(data: &Path) -> Result<(Vec<narkit::preprocess::PreprocessRecord>, Vocabulary, NodeTypeIndex)> {
    let records_path = data.join("records.jsonl");
    let file = fs::File::open(&records_path)
        .with_context(|| format!("opening {}", records_path.display()))?;
    let records =
        read_records(std::io::BufReader::new(file)).map_err(|e| anyhow::anyhow!(e))?;
    let vocab = Vocabulary::from_text(
        &fs::read_to_string(data.join("vocab.txt")).context("reading vocab.txt")?,
    );
    let index = NodeTypeIndex::from_text(
        &fs::read_to_string(data.join("node_types.txt")).context("reading node_types.txt")?,
    );
    Ok((records, vocab, index))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut settings = Settings::from_defaults();
    if let Some(path) = &args.config {
        settings.load_file(path)?;
    }
    settings.put_opt("seed", args.seed);
    settings.put_opt("epochs", args.epochs);
    settings.put_opt("batch_size", args.batch_size);
    settings.put_opt("peak_lr", args.peak_lr);
    settings.put_opt("d_model", args.d_model);
    settings.put_opt("encoder_layers", args.encoder_layers);
    settings.put_opt("decoder_layers", args.decoder_layers);
    settings.put_opt("decoder_split", args.decoder_split);
    settings.put_opt("max_seq_len", args.max_seq_len);
    settings.put_opt("dropout", args.dropout);
    settings.put_opt("stop_at_val_exact", args.stop_at_val_exact);

    let (records, vocab, index) = load_data_dir(&args.data)?;
    let model_config = settings.model_config()?;
    let train_config = settings.train_config()?;
    let dims = ModelDims { vocab_size: vocab.len(), node_types: index.len() };
    let mut params = ModelParams::init(&model_config, dims, train_config.seed);

    eprintln!(
        "training on {} records ({} params, seed {})",
        records.len(),
        params.param_count(),
        train_config.seed
    );
    let report = match run_train(&records, &vocab, &mut params, &model_config, &train_config) {
        Ok(report) => report,
        Err(TrainError::Divergence { epoch, last_good }) => {
            // Keep the last finite parameters so the artifact stays usable.
            params = *last_good;
            eprintln!("warning: training diverged at epoch {epoch}; saving last good checkpoint");
            fs::create_dir_all(&args.out)?;
            save_train_artifacts(&args.out, &params, &model_config, &settings, "", &vocab, &index)?;
            bail!("training diverged at epoch {epoch}");
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(last) = report.epochs.last() {
        eprintln!(
            "finished {} epochs, final loss {:.4}, val exact match {:.3}",
            report.epochs.len(),
            last.total,
            last.val_exact_match
        );
    }
    fs::create_dir_all(&args.out)?;
    save_train_artifacts(
        &args.out,
        &params,
        &model_config,
        &settings,
        &report.to_jsonl(),
        &vocab,
        &index,
    )?;
    Ok(())
}

fn save_train_artifacts(
    out: &Path,
    params: &ModelParams,
    model_config: &narkit::nnet::ModelConfig,
    settings: &Settings,
    report_jsonl: &str,
    vocab: &Vocabulary,
    index: &NodeTypeIndex,
) -> Result<()> {
    let mut file = fs::File::create(out.join("model.ckpt"))?;
    checkpoint::save(&mut file, params, model_config)?;
    fs::write(out.join("report.jsonl"), report_jsonl)?;
    fs::write(out.join("config.txt"), settings.to_text())?;
    fs::write(out.join("vocab.txt"), vocab.to_text())?;
    fs::write(out.join("node_types.txt"), index.to_text())?;
    Ok(())
}

fn load_checkpoint_dir(ckpt: &Path) -> Result<(ModelParams, narkit::nnet::ModelConfig, Vocabulary)> {
    let mut file =
        fs::File::open(ckpt).with_context(|| format!("opening checkpoint {}", ckpt.display()))?;
    let (params, config) = checkpoint::load_with_config(&mut file)?;
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    let vocab_path = dir.join("vocab.txt");
    let vocab = Vocabulary::from_text(
        &fs::read_to_string(&vocab_path)
            .with_context(|| format!("reading {}", vocab_path.display()))?,
    );
    if vocab.len() != params.dims.vocab_size {
        bail!(
            "vocab.txt has {} entries but the checkpoint was trained with {}",
            vocab.len(),
            params.dims.vocab_size
        );
    }
    Ok((params, config, vocab))
}

pub fn repair(ckpt: &Path, input: &Path, k: usize, out: Option<&Path>) -> Result<()> {
    let (params, config, vocab) = load_checkpoint_dir(ckpt)?;
    let buggy =
        fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let grammar = MiniGrammar::new();
    let candidates = infer::repair(&buggy, &params, &config, &vocab, &grammar, k)?;
    let report = serde_json::json!({
        "input": buggy.trim_end(),
        "k": k,
        "config": config_json(&config, &params),
        "patches": candidates
            .iter()
            .enumerate()
            .map(|(rank, c)| {
                serde_json::json!({
                    "rank": rank + 1,
                    "score": c.score,
                    "text": c.tokens.join(" "),
                    "tokens": c.tokens,
                    "actions": c.actions.iter().map(|a| a.as_str()).collect::<Vec<_>>(),
                    "fertilities": c.fertilities,
                    "stage2_positions": c.stage2_positions,
                })
            })
            .collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn config_json(config: &narkit::nnet::ModelConfig, params: &ModelParams) -> serde_json::Value {
    let mut value = serde_json::to_value(config).expect("config serializes");
    value["vocab_size"] = params.dims.vocab_size.into();
    value["node_types"] = params.dims.node_types.into();
    value
}

pub fn bench(
    lengths: &[usize],
    repeats: usize,
    ckpt: Option<&Path>,
    seed: u64,
    out: &Path,
    config_file: Option<&Path>,
    d_model: Option<usize>,
) -> Result<()> {
    if repeats < 3 {
        bail!("bench needs at least 3 repeats");
    }
    let mut settings = Settings::from_defaults();
    if let Some(path) = config_file {
        settings.load_file(path)?;
    }
    settings.put_opt("d_model", d_model);
    settings.put("seed", seed);
    let (params, config) = match ckpt {
        Some(path) => {
            let mut file = fs::File::open(path)
                .with_context(|| format!("opening checkpoint {}", path.display()))?;
            checkpoint::load_with_config(&mut file)?
        }
        None => {
            let config = settings.model_config()?;
            let dims = ModelDims { vocab_size: 64, node_types: 16 };
            (ModelParams::init(&config, dims, seed), config)
        }
    };
    let max_len = lengths.iter().max().copied().unwrap_or(0);
    if max_len + 1 >= config.max_seq_len {
        bail!("length {max_len} does not fit max_seq_len {}", config.max_seq_len);
    }
    eprintln!("benchmarking lengths {lengths:?} with {repeats} repeats");
    let result = infer::bench_latency(lengths, &params, &config, repeats)?;
    fs::create_dir_all(out)?;
    let echo: String = settings.to_text().lines().map(|l| format!("# {l}\n")).collect();
    fs::write(out.join("bench.csv"), format!("{echo}{}", result.to_csv()))?;
    fs::write(out.join("passes.csv"), format!("{echo}{}", result.passes_csv()))?;
    fs::write(out.join("bench.md"), result.to_markdown())?;
    for row in &result.rows {
        eprintln!(
            "length {:3}: nar {:7.2} ms ({} passes)  ar {:8.2} ms ({} passes)  speedup {:.2}x",
            row.length, row.nar_ms, row.nar_passes, row.ar_ms, row.ar_passes, row.speedup
        );
    }
    Ok(())
}

pub fn inspect(text: Option<String>, input: Option<&Path>) -> Result<()> {
    let source = match (text, input) {
        (Some(t), None) => t,
        (None, Some(path)) => {
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        _ => bail!("provide exactly one of --text or --input"),
    };
    let grammar = MiniGrammar::new();
    let tokens = corpus::tokenize(&source, &grammar);
    let tree = astdep::parse(&source, &grammar)?;
    let index = NodeTypeIndex::harvest([&tree]);
    let matrix = astdep::build_dependency_matrix(&tree, &index)?;

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "tokens ({}):", tokens.len())?;
    for (i, token) in tokens.iter().enumerate() {
        let leaf = tree.leaf_for_token(i);
        writeln!(w, "  {i:3}  {:<12} {}", token, tree.nodes[leaf].node_type)?;
    }
    writeln!(w, "\nast:")?;
    print_tree(&mut w, &tree, tree.root, 1)?;
    writeln!(w, "\ndependency matrix (node-type names):")?;
    let width = (0..index.len()).map(|i| index.name(i).len()).max().unwrap_or(4).max(4) + 1;
    write!(w, "{:>5}", "")?;
    for j in 0..matrix.m {
        write!(w, "{j:>width$}")?;
    }
    writeln!(w)?;
    for i in 0..matrix.m {
        write!(w, "{i:>4} ")?;
        for j in 0..matrix.m {
            write!(w, "{:>width$}", index.name(matrix.get(i, j)))?;
        }
        writeln!(w)?;
    }
    writeln!(w, "\nlegend (node-type ids):")?;
    for id in 0..index.len() {
        writeln!(w, "  {id:3} = {}", index.name(id))?;
    }
    Ok(())
}

fn print_tree(w: &mut impl Write, tree: &AstTree, node: usize, depth: usize) -> Result<()> {
    let n = &tree.nodes[node];
    if n.token_index.is_some() {
        writeln!(w, "{}{} {:?}", "  ".repeat(depth), n.node_type, n.text)?;
    } else {
        writeln!(w, "{}{}", "  ".repeat(depth), n.node_type)?;
        for &c in &n.children {
            print_tree(w, tree, c, depth + 1)?;
        }
    }
    Ok(())
}
