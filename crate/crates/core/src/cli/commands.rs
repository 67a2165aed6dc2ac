use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use toml::{Table, Value};

use super::config::{parse_assignment, RunConfig};
use super::{AttnArgs, EvalArgs, KfoldArgs, PredictArgs, RunArgs, StatsArgs, SynthArgs};
use crate::data::conll::repair_bio;
use crate::data::stats::split_stats;
use crate::data::{
    dataset_stats, generate_synthetic, parse_conll, write_conll, Corpus, CorpusStats, EmbeddingTable, Sentence,
    SyntheticSpec,
};
use crate::encoder::vocab::normalize;
use crate::encoder::{CharVocab, TraceRecord};
use crate::error::{Error, Result};
use crate::tagger::{LabelScheme, Simplified, TaggerConfig, TaggerModel, Task};
use crate::train::{evaluate, score_predictions, train_with, transfer_with, EpochMetrics, TransferMode};

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
    Ok(p)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<PathBuf> {
    write_text(dir, name, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn out_dir(p: &Path) -> Result<&Path> {
    fs::create_dir_all(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
    Ok(p)
}

fn write_resolved<T: Serialize>(dir: &Path, v: &T) -> Result<()> {
    let text = toml::to_string(v).map_err(|e| Error::Config(e.to_string()))?;
    write_text(dir, "config.resolved", &text)?;
    Ok(())
}

/// Tags `path` onto errors that do not already carry a location.
fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::Numeric { .. } => e,
        Error::Io(io) => Error::Input(format!("{}: {io}", path.display())),
        other => Error::Input(format!("{}: {other}", path.display())),
    }
}

fn scheme_for(task: &str, scheme_file: Option<&Path>, entity_types: &[String]) -> Result<LabelScheme> {
    let task: Task = task.parse()?;
    if let Some(p) = scheme_file {
        return LabelScheme::from_file(task, p).map_err(|e| at(p, e));
    }
    if task == Task::Ner && !entity_types.is_empty() {
        let types: Vec<&str> = entity_types.iter().map(String::as_str).collect();
        return LabelScheme::bio(&types);
    }
    LabelScheme::builtin(task)
}

fn read_split(path: &Path, scheme: &LabelScheme, repair: bool) -> Result<Vec<Sentence>> {
    let mut s = parse_conll(path, scheme).map_err(|e| at(path, e))?;
    if repair && scheme.task() == Task::Ner {
        let fixed: usize = s.iter_mut().map(repair_bio).sum();
        if fixed > 0 {
            warn!("{}: repaired {fixed} BIO tags", path.display());
        }
    }
    Ok(s)
}

/// Sentences as surfaces plus the second column when present.
fn read_tokens(path: &Path) -> Result<Vec<(Vec<String>, Vec<Option<String>>)>> {
    let text = fs::read_to_string(path).map_err(|e| at(path, e.into()))?;
    let mut out = Vec::new();
    let mut cur = (Vec::new(), Vec::new());
    for line in text.lines() {
        let mut f = line.split(|c: char| c == '\t' || c.is_whitespace()).filter(|s| !s.is_empty());
        match f.next() {
            None => {
                if !cur.0.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            Some(w) => {
                cur.0.push(normalize(w));
                cur.1.push(f.next().map(str::to_string));
            }
        }
    }
    if !cur.0.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

fn load_model(path: &Path) -> Result<TaggerModel> {
    TaggerModel::load(path).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => at(path, other),
    })
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut file = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    let stems = match file.remove("stems") {
        Some(Value::Integer(n)) if n > 0 => n as usize,
        Some(v) => return Err(Error::Config(format!("stems must be a positive integer, got {v}"))),
        None => 50,
    };
    let base = SyntheticSpec::demo(a.stems.unwrap_or(stems), 7);
    let mut table = Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in file {
        table.insert(k, v);
    }
    if let Some(s) = a.seed {
        table.insert("seed".into(), Value::Integer(s as i64));
    }
    if let Some(n) = a.sentences {
        table.insert("sentences".into(), Value::Integer(n as i64));
    }
    if let Some(p) = a.switch_prob {
        table.insert("switch_prob".into(), Value::Float(p));
    }
    if let Some(t) = &a.task {
        table.insert("task".into(), Value::String(t.clone()));
    }
    let spec: SyntheticSpec = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("synthetic spec: {}", e.to_string().trim())))?;
    let corpus = generate_synthetic(&spec)?;
    let dir = out_dir(&a.out)?;
    write_resolved(dir, &spec)?;
    for (name, split) in corpus.splits() {
        write_text(dir, &format!("{name}.conll"), &write_conll(split))?;
    }
    let stats = dataset_stats(&corpus)?;
    write_json(dir, "stats.json", &stats)?;
    for s in &stats.splits {
        let cs = s.utterances.as_ref().map_or(0, |u| u.code_switched);
        println!("{}: {} sentences, {} tokens, {} code-switched", s.name, s.sentences, s.tokens, cs);
    }
    Ok(())
}

fn overrides(a: &RunArgs) -> Result<Vec<(String, Value)>> {
    let mut o: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, v: Value| o.push((k.to_string(), v));
    if let Some(e) = &a.experiment {
        let (pooling, flags) = TaggerConfig::experiment(e)?;
        put("encoder.pooling", Value::String(pooling.as_str().into()));
        put("tagger.concat_ngram_to_crf", Value::Boolean(flags.concat_ngram_to_crf));
        put("tagger.use_secondary", Value::Boolean(flags.use_secondary));
        put("tagger.use_static", Value::Boolean(flags.use_static));
    }
    if let Some(p) = &a.out {
        put("output_dir", Value::String(p.display().to_string()));
    }
    if let Some(s) = a.seed {
        put("seed", Value::Integer(s as i64));
    }
    if let Some(p) = &a.pooling {
        let mode: crate::encoder::PoolingMode = p.parse()?;
        put("encoder.pooling", Value::String(mode.as_str().into()));
    }
    if a.no_secondary {
        put("tagger.use_secondary", Value::Boolean(false));
    }
    if a.no_static {
        put("tagger.use_static", Value::Boolean(false));
    }
    if a.no_concat {
        put("tagger.concat_ngram_to_crf", Value::Boolean(false));
    }
    if let Some(t) = &a.transfer {
        let mode: TransferMode = t.parse()?;
        put("train.transfer", Value::String(mode.to_string()));
    }
    if a.unfreeze {
        put("train.unfreeze", Value::Boolean(true));
    }
    if let Some(s) = &a.scheduler {
        put("train.scheduler", Value::String(s.clone()));
    }
    if let Some(n) = a.epochs {
        put("train.epochs", Value::Integer(n as i64));
    }
    if let Some(n) = a.batch_size {
        put("train.batch_size", Value::Integer(n as i64));
    }
    if let Some(x) = a.lr {
        put("train.lr", Value::Float(x));
    }
    if let Some(t) = &a.task {
        put("data.task", Value::String(t.to_ascii_lowercase()));
    }
    let path = |p: &PathBuf| Value::String(p.display().to_string());
    for (key, v) in [
        ("paths.data_dir", &a.data_dir),
        ("paths.train", &a.train),
        ("paths.dev", &a.dev),
        ("paths.test", &a.test),
        ("paths.pretrained", &a.pretrained),
    ] {
        if let Some(p) = v {
            put(key, path(p));
        }
    }
    if !a.embeddings.is_empty() {
        put("paths.embeddings", Value::Array(a.embeddings.iter().map(path).collect()));
    }
    for kv in &a.set {
        let (k, v) = parse_assignment(kv)?;
        put(&k, v);
    }
    Ok(o)
}

fn split_path(cfg: &RunConfig, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| cfg.paths.data_dir.as_ref().map(|d| d.join(format!("{name}.conll"))))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let d = &cfg.data;
    let scheme = scheme_for(&d.task.to_string(), d.scheme_file.as_deref(), &d.entity_types)?;
    let need = |name: &str, p: Option<PathBuf>| {
        p.ok_or_else(|| Error::Config(format!("no {name} split: set paths.{name} or paths.data_dir")))
    };
    let train = need("train", split_path(cfg, &cfg.paths.train, "train"))?;
    let dev = need("dev", split_path(cfg, &cfg.paths.dev, "dev"))?;
    let test = match split_path(cfg, &cfg.paths.test, "test") {
        Some(p) if cfg.paths.test.is_some() || p.exists() => read_split(&p, &scheme, d.repair_bio)?,
        _ => Vec::new(),
    };
    Ok(Corpus {
        train: read_split(&train, &scheme, d.repair_bio)?,
        dev: read_split(&dev, &scheme, d.repair_bio)?,
        test,
        scheme,
    })
}

fn load_tables(cfg: &RunConfig) -> Result<Vec<EmbeddingTable>> {
    if !cfg.tagger.use_static {
        return Ok(Vec::new());
    }
    cfg.paths
        .embeddings
        .iter()
        .map(|p| {
            let (t, dups) = EmbeddingTable::load(p).map_err(|e| at(p, e))?;
            if dups > 0 {
                warn!("{}: {dups} duplicate words, last occurrence kept", p.display());
            }
            Ok(t)
        })
        .collect()
}

pub fn train(a: &RunArgs, transfer: bool) -> Result<()> {
    let cfg = RunConfig::resolve(a.config.as_deref(), &overrides(a)?)?;
    if !transfer && cfg.train.transfer != TransferMode::None {
        return Err(Error::Config("encoder transfer needs the `transfer` subcommand".into()));
    }
    let pretrained = if transfer {
        let p = cfg
            .paths
            .pretrained
            .as_ref()
            .ok_or_else(|| Error::Config("transfer needs paths.pretrained".into()))?;
        Some(load_model(p)?)
    } else {
        None
    };
    let corpus = load_corpus(&cfg)?;
    let tables = load_tables(&cfg)?;
    let dir = out_dir(&cfg.output_dir)?;
    write_text(dir, "config.resolved", &cfg.to_toml()?)?;
    let tc = cfg.train_config();

    let log_path = dir.join("metrics.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| at(&log_path, e.into()))?);
    let mut io_err = None;
    let mut on_epoch = |m: &EpochMetrics| {
        let r = serde_json::to_string(m)
            .map_err(Error::from)
            .and_then(|line| writeln!(log, "{line}").and_then(|_| log.flush()).map_err(Error::from));
        if let Err(e) = r {
            io_err.get_or_insert(e);
        }
    };
    let outcome = match &pretrained {
        Some(p) => transfer_with(p, &corpus, cfg.tagger_config(p.vocab().size())?, tables, &tc, &mut on_epoch)?,
        None => {
            let vocab = CharVocab::from_words(corpus.train.iter().flat_map(|s| s.tokens.iter().map(|t| t.surface.as_str())));
            let model = TaggerModel::new(cfg.tagger_config(vocab.size())?, corpus.scheme.clone(), vocab, tables, cfg.seed)?;
            train_with(model, &corpus, &tc, &mut on_epoch)?
        }
    };
    if let Some(e) = io_err {
        return Err(e);
    }
    outcome.best.save(&dir.join("model.ckpt"))?;
    let best = &outcome.log[outcome.best_epoch - 1];
    println!(
        "best epoch {}: dev weighted F1 {:.4}, accuracy {:.4}",
        best.epoch, best.dev_weighted_f1, best.dev_accuracy
    );
    if !corpus.test.is_empty() {
        let (report, _) = evaluate(&outcome.best, &corpus.test)?;
        write_json(dir, "test_metrics.json", &report)?;
        println!("test: weighted F1 {:.4}, accuracy {:.4}", report.weighted_f1, report.accuracy);
    }
    println!("encoder checksum {}", outcome.best.encoder_checksum());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let gold = read_split(&a.corpus, model.scheme(), false)?;
    let report = if a.gold_as_pred {
        let labels: Vec<Vec<String>> = gold.iter().map(|s| s.labels().iter().map(|l| l.to_string()).collect()).collect();
        let simp: Option<Vec<Vec<Simplified>>> = gold
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.simplified_in(model.scheme())).collect())
            .collect();
        score_predictions(model.scheme(), &gold, &labels, simp.as_deref())?
    } else {
        evaluate(&model, &gold)?.0
    };
    let dir = out_dir(&a.out)?;
    write_resolved(dir, a)?;
    write_json(dir, "metrics.json", &report)?;
    println!(
        "{} sentences, {} tokens: weighted F1 {:.4}, accuracy {:.4}",
        report.sentences, report.tokens, report.weighted_f1, report.accuracy
    );
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let sents = read_tokens(&a.corpus)?;
    let mut out = String::new();
    for (words, _) in &sents {
        let p = model.predict(words)?;
        for (k, w) in words.iter().enumerate() {
            out.push_str(w);
            out.push('\t');
            out.push_str(&p.labels[k]);
            if let Some(s) = &p.simplified {
                out.push('\t');
                out.push_str(s[k].as_str());
            }
            out.push('\n');
        }
        out.push('\n');
    }
    let dir = out_dir(&a.out)?;
    write_resolved(dir, a)?;
    write_text(dir, "predictions.conll", &out)?;
    println!("tagged {} sentences", sents.len());
    Ok(())
}

pub fn attn_export(a: &AttnArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    if !model.pooling().is_attention() {
        return Err(Error::Mode("attention export needs an attention pooling mode, model uses maxpool".into()));
    }
    let sents = read_tokens(&a.corpus)?;
    let dir = out_dir(&a.out)?;
    write_resolved(dir, a)?;
    let path = dir.join("attention.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| at(&path, e.into()))?);
    let mut n = 0usize;
    for (i, (words, gold)) in sents.iter().enumerate() {
        let p = match a.shuffle_positions {
            Some(seed) => model.predict_shuffled(words, seed.wrapping_add(i as u64))?,
            None => model.predict(words)?,
        };
        for (k, t) in p.traces.iter().enumerate() {
            let Some(t) = t else { continue };
            let recs: Vec<TraceRecord> = t.records(i, k, &p.labels[k], gold[k].as_deref());
            for r in recs {
                writeln!(w, "{}", serde_json::to_string(&r)?)?;
                n += 1;
            }
        }
    }
    w.flush()?;
    println!("wrote {n} attention records for {} sentences", sents.len());
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let scheme = scheme_for(&a.task, a.scheme_file.as_deref(), &a.entity_type)?;
    let mut splits = Vec::new();
    for p in &a.corpus {
        let s = read_split(p, &scheme, false)?;
        let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        splits.push(split_stats(&name, &s, &scheme)?);
    }
    let stats = CorpusStats {
        task: scheme.task().to_string(),
        splits,
    };
    let dir = out_dir(&a.out)?;
    write_resolved(dir, a)?;
    write_json(dir, "stats.json", &stats)?;
    for s in &stats.splits {
        print!("{}: {} sentences, {} tokens", s.name, s.sentences, s.tokens);
        if let Some(c) = &s.cmi {
            print!(", cmi_all {:.3}, cmi_mixed {:.3}", c.cmi_all, c.cmi_mixed);
        }
        println!();
    }
    Ok(())
}

pub fn kfold(a: &KfoldArgs) -> Result<()> {
    let scheme = scheme_for(&a.task, a.scheme_file.as_deref(), &a.entity_type)?;
    let sents = read_split(&a.corpus, &scheme, false)?;
    if a.k < 3 {
        return Err(Error::Config("k must be at least 3 (one fold each for dev and test)".into()));
    }
    if sents.len() < a.k {
        return Err(Error::Input(format!("{} sentences cannot fill {} folds", sents.len(), a.k)));
    }
    let mut order: Vec<usize> = (0..sents.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let fold_of = |pos: usize| pos % a.k;
    let dir = out_dir(&a.out)?;
    write_resolved(dir, a)?;
    for f in 0..a.k {
        let dev_fold = (f + 1) % a.k;
        let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (pos, &i) in order.iter().enumerate() {
            let s = sents[i].clone();
            match fold_of(pos) {
                x if x == f => test.push(s),
                x if x == dev_fold => dev.push(s),
                _ => train.push(s),
            }
        }
        let fd = dir.join(format!("fold{f}"));
        let fd = out_dir(&fd)?;
        write_text(fd, "train.conll", &write_conll(&train))?;
        write_text(fd, "dev.conll", &write_conll(&dev))?;
        write_text(fd, "test.conll", &write_conll(&test))?;
    }
    println!("wrote {} folds of {} sentences", a.k, sents.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_tokens_keeps_optional_gold() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        fs::write(&p, "a\tlang1\nb\n\n\nc lang2 lang2\n").unwrap();
        let s = read_tokens(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].1, vec![Some("lang1".to_string()), None]);
        assert_eq!(s[1].0, vec!["c"]);
    }
}
