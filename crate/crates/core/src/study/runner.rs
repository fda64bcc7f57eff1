//! Data generation, training and table assembly for a study directory.
//!
//! ```text
//! <out>/data/manifest.toml
//! <out>/data/<dataset>.tsv
//! <out>/runs/<dataset>/seed<k>/...
//! <out>/tables/<attribute>.mean.csv, <attribute>.std.csv, <attribute>.txt
//! <out>/tables/multi.mean.csv, multi.std.csv, multi.txt
//! ```

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{FamilyConfig, StudyConfig};
use super::enumerate::{enumerate_compositions, subset_label};
use super::table::{mean_std, multi_columns, single_columns, ResultsTable, Stat, TableRow};
use crate::adapter::LowRankAdapter;
use crate::compose::CompositionStrategy;
use crate::data::{
    build_combined, gen_synthetic, ood_prompts, prompt_pairs, read_dataset, write_dataset, LabeledDataset, PromptExample,
    Split, Vocab,
};
use crate::error::{Error, Result};
use crate::evaluate::{generate_records, report_multi, report_single, EvalDecoding, FluencyModels};
use crate::host::{HostConfig, HostModel, TokenId};
use crate::metrics::{BigramScorer, GenerationRecord, HostScorer, MetricReport, OracleClassifier, UnigramModel};
use crate::numeric::Prng;
use crate::trainer::{load_selected, train_adapters, write_run, TrainConfig, TrainOutcome, ValidationSpec};

pub const DATA_DIR: &str = "data";
pub const RUNS_DIR: &str = "runs";
pub const TABLES_DIR: &str = "tables";
pub const DATA_MANIFEST: &str = "manifest.toml";
pub const OOD_SET: &str = "ood";
pub const MULTI_TABLE: &str = "multi";

const SMOOTHING: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub attribute: String,
    /// `source` or `combined`.
    pub kind: String,
    pub file: String,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub data_seed: u64,
    pub dataset: Vec<DatasetEntry>,
}

/// The datasets of one attribute family: sources in config order, then the combined set.
#[derive(Clone, Debug)]
pub struct FamilyData {
    pub sources: Vec<LabeledDataset>,
    pub combined: LabeledDataset,
    pub warnings: Vec<String>,
}

impl FamilyData {
    /// Sources followed by the combined dataset.
    pub fn all(&self) -> impl Iterator<Item = &LabeledDataset> {
        self.sources.iter().chain(std::iter::once(&self.combined))
    }
}

/// Built (and optionally quantized) frozen host.
pub fn build_host(cfg: &StudyConfig) -> Result<HostModel> {
    let mut host = HostModel::build(cfg.host.clone())?;
    if cfg.quant_block > 0 {
        host.quantize_frozen(cfg.quant_block)?;
    }
    Ok(host)
}

pub fn generate_family(cfg: &StudyConfig, vocab: &Vocab, family: usize) -> Result<FamilyData> {
    let fam = &cfg.family[family];
    let base = Prng::new(cfg.data_seed).derive(family as u64 + 1);
    let sources = fam
        .source
        .iter()
        .enumerate()
        .map(|(i, s)| gen_synthetic(&fam.synth_spec(vocab, s)?, s.size, base.derive(i as u64 + 1).seed()))
        .collect::<Result<Vec<_>>>()?;
    let combined = build_combined(&fam.combined_name(), &sources, base.derive(0).seed())?;
    for w in &combined.warnings {
        warn!("{w}");
    }
    Ok(FamilyData {
        sources,
        combined: combined.dataset,
        warnings: combined.warnings,
    })
}

fn entry(ds: &LabeledDataset, attribute: &str, kind: &str, warnings: Vec<String>) -> DatasetEntry {
    DatasetEntry {
        name: ds.name.clone(),
        attribute: attribute.to_string(),
        kind: kind.to_string(),
        file: format!("{}.tsv", ds.name),
        train: ds.train.len(),
        validation: ds.validation.len(),
        test: ds.test.len(),
        warnings,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every source and combined dataset plus a manifest of split sizes.
pub fn gen_data(cfg: &StudyConfig, out: &Path) -> Result<DataManifest> {
    let vocab = Vocab::standard();
    let dir = out.join(DATA_DIR);
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for (fi, fam) in cfg.family.iter().enumerate() {
        let data = generate_family(cfg, &vocab, fi)?;
        for ds in &data.sources {
            write_dataset(&vocab, ds, dir.join(format!("{}.tsv", ds.name)))?;
            entries.push(entry(ds, &fam.attribute, "source", Vec::new()));
        }
        write_dataset(&vocab, &data.combined, dir.join(format!("{}.tsv", data.combined.name)))?;
        entries.push(entry(&data.combined, &fam.attribute, "combined", data.warnings.clone()));
        info!("{}: {} sources and {}", fam.attribute, data.sources.len(), data.combined.name);
    }
    let manifest = DataManifest {
        data_seed: cfg.data_seed,
        dataset: entries,
    };
    let path = dir.join(DATA_MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_named(vocab: &Vocab, dir: &Path, name: &str) -> Result<LabeledDataset> {
    let path = dir.join(format!("{name}.tsv"));
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let ds = read_dataset(vocab, &path)?;
    if ds.name != name {
        return Err(Error::Malformed(format!("{} holds dataset {:?}", path.display(), ds.name)));
    }
    Ok(ds)
}

/// Reads a family's datasets written by [`gen_data`].
pub fn load_family(cfg: &StudyConfig, vocab: &Vocab, out: &Path, family: usize) -> Result<FamilyData> {
    let fam = &cfg.family[family];
    let dir = out.join(DATA_DIR);
    let sources = fam
        .source
        .iter()
        .map(|s| read_named(vocab, &dir, &s.name))
        .collect::<Result<Vec<_>>>()?;
    let combined = read_named(vocab, &dir, &fam.combined_name())?;
    Ok(FamilyData {
        sources,
        combined,
        warnings: Vec::new(),
    })
}

fn load_or_generate(cfg: &StudyConfig, vocab: &Vocab, out: &Path, family: usize, generate: bool) -> Result<FamilyData> {
    match load_family(cfg, vocab, out, family) {
        Err(Error::MissingArtifact(p)) if generate => {
            info!("{p} missing, regenerating data");
            gen_data(cfg, out)?;
            load_family(cfg, vocab, out, family)
        }
        other => other,
    }
}

/// Three-member oracle ensemble over the family's marker lexicons.
pub fn family_ensemble(vocab: &Vocab, fam: &FamilyConfig) -> Result<Vec<OracleClassifier>> {
    let lexicons = fam
        .labels
        .iter()
        .map(|l| Ok((l.clone(), vocab.markers(l)?.to_vec())))
        .collect::<Result<Vec<_>>>()?;
    OracleClassifier::ensemble(&fam.attribute, &lexicons)
}

/// Prompt pairs for a split; the draw of leading words depends only on `seed` and the split.
pub fn split_prompts(vocab: &Vocab, ds: &LabeledDataset, split: Split, limit: usize, seed: u64) -> Result<Vec<PromptExample>> {
    let items = ds.split(split);
    let items = match limit {
        0 => items,
        n => &items[..n.min(items.len())],
    };
    let salt = match split {
        Split::Train => 1,
        Split::Validation => 2,
        Split::Test => 3,
    };
    prompt_pairs(vocab, &ds.schema, items, Prng::new(seed).derive(salt).seed())
}

pub fn run_dir(out: &Path, dataset: &str, seed: u64) -> PathBuf {
    out.join(RUNS_DIR).join(dataset).join(format!("seed{seed}"))
}

/// Trains adapters for `ds` at the configured sites with the given seed.
pub fn train_dataset(
    cfg: &StudyConfig,
    vocab: &Vocab,
    host: &mut HostModel,
    ds: &LabeledDataset,
    ensemble: &[OracleClassifier],
    seed: u64,
) -> Result<TrainOutcome> {
    let train = split_prompts(vocab, ds, Split::Train, 0, seed)?;
    let validation = split_prompts(vocab, ds, Split::Validation, 0, seed)?;
    let special = |t: TokenId| vocab.is_special(t);
    let spec = ValidationSpec {
        prompts: &validation,
        ensemble,
        stop: vocab.ans_close(),
        is_special: &special,
    };
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    train_adapters(host, &ds.name, &cfg.resolve_sites()?, &train, &spec, &train_cfg)
}

fn train_and_write(
    cfg: &StudyConfig,
    vocab: &Vocab,
    host: &mut HostModel,
    ds: &LabeledDataset,
    ensemble: &[OracleClassifier],
    seed: u64,
    dir: &Path,
) -> Result<()> {
    info!("training {} seed {seed}", ds.name);
    let outcome = train_dataset(cfg, vocab, host, ds, ensemble, seed)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    create_dir(dir)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let manifest = write_run(dir, &ds.name, &outcome, &train_cfg)?;
    info!("{} seed {seed}: selected epoch {}", ds.name, manifest.selected_epoch);
    Ok(())
}

/// Trains every dataset (or only `dataset`) for every seed (or only `seed`).
/// With `only_missing`, runs that already have a manifest are skipped.
pub fn train(cfg: &StudyConfig, out: &Path, dataset: Option<&str>, seed: Option<u64>, only_missing: bool) -> Result<Vec<PathBuf>> {
    let vocab = Vocab::standard();
    let mut host = build_host(cfg)?;
    let seeds: Vec<u64> = match seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let mut written = Vec::new();
    let mut matched = false;
    for (fi, fam) in cfg.family.iter().enumerate() {
        let names: Vec<String> = fam.source.iter().map(|s| s.name.clone()).chain([fam.combined_name()]).collect();
        if dataset.is_some_and(|d| !names.iter().any(|n| n == d)) {
            continue;
        }
        matched = true;
        let data = load_family(cfg, &vocab, out, fi)?;
        let ensemble = family_ensemble(&vocab, fam)?;
        for ds in data.all().filter(|d| dataset.is_none_or(|n| n == d.name)) {
            for &s in &seeds {
                let dir = run_dir(out, &ds.name, s);
                if only_missing && load_selected(&dir).is_ok() {
                    continue;
                }
                train_and_write(cfg, &vocab, &mut host, ds, &ensemble, s, &dir)?;
                written.push(dir);
            }
        }
    }
    if let Some(d) = dataset.filter(|_| !matched) {
        return Err(Error::MissingArtifact(format!("dataset {d:?} is not in the study config")));
    }
    Ok(written)
}

/// Generation and scoring against one frozen host.
pub struct Evaluator {
    host: HostModel,
    vocab: Vocab,
    unigram: UnigramModel,
    bigram: BigramScorer,
    reference: HostScorer,
    max_new_tokens: usize,
    temperature: f64,
}

impl Evaluator {
    /// SLOR models are fitted on `corpus`; the host scorer is an independent host
    /// built with seed + 1.
    pub fn new(cfg: &StudyConfig, host: HostModel, corpus: &[&[TokenId]]) -> Result<Self> {
        let vocab = Vocab::standard();
        let v = cfg.host.vocab_size;
        let unigram = UnigramModel::fit(corpus.iter().copied(), v, SMOOTHING)?;
        let bigram = BigramScorer::fit(corpus.iter().copied(), v, vocab.bos(), SMOOTHING)?;
        let reference = HostScorer {
            host: HostModel::build(HostConfig {
                seed: cfg.host.seed.wrapping_add(1),
                ..cfg.host.clone()
            })?,
            start: vocab.bos(),
        };
        Ok(Self {
            host,
            vocab,
            unigram,
            bigram,
            reference,
            max_new_tokens: cfg.max_new_tokens,
            temperature: cfg.temperature,
        })
    }

    pub fn host(&self) -> &HostModel {
        &self.host
    }

    /// Host copy with every adapter attached. The strategy applies to every site
    /// that ends up with an adapter.
    pub fn compose(&self, adapters: &[&LowRankAdapter], strategy: Option<CompositionStrategy>) -> Result<HostModel> {
        let mut model = self.host.clone();
        for ad in adapters {
            model.attach(ad.site(), (*ad).clone())?;
        }
        if let Some(s) = strategy {
            model.set_strategy_all(s)?;
        }
        Ok(model)
    }

    pub fn records(&self, model: &HostModel, prompts: &[PromptExample], seed: u64) -> Result<Vec<GenerationRecord>> {
        let decoding = if self.temperature == 0.0 {
            EvalDecoding::Greedy
        } else {
            EvalDecoding::Sample {
                temperature: self.temperature,
                seed,
            }
        };
        let vocab = &self.vocab;
        generate_records(model, prompts, self.max_new_tokens, vocab.ans_close(), |t| vocab.is_special(t), decoding)
    }

    fn fluency(&self) -> FluencyModels<'_> {
        FluencyModels {
            scorers: vec![&self.bigram, &self.reference],
            unigram: &self.unigram,
        }
    }

    pub fn report_single(
        &self,
        model: &HostModel,
        prompts: &[PromptExample],
        ensemble: &[OracleClassifier],
        seed: u64,
    ) -> Result<MetricReport> {
        report_single(&self.records(model, prompts, seed)?, ensemble, &self.fluency())
    }

    pub fn report_multi(
        &self,
        model: &HostModel,
        prompts: &[PromptExample],
        ensembles: &[Vec<OracleClassifier>],
        seed: u64,
    ) -> Result<MetricReport> {
        report_multi(&self.records(model, prompts, seed)?, ensembles, &self.fluency())
    }
}

/// Sampling seed for evaluation set `set` under training seed `seed`; shared by all
/// rows so rows are compared on the same random stream.
pub fn eval_seed(seed: u64, set: usize) -> u64 {
    Prng::new(seed).derive(0x4556_414c + set as u64).seed()
}

struct EvalSet {
    name: String,
    prompts: Vec<PromptExample>,
    in_domain: bool,
}

fn family_eval_sets(cfg: &StudyConfig, vocab: &Vocab, family: usize, data: &FamilyData) -> Result<Vec<EvalSet>> {
    let fam = &cfg.family[family];
    let mut sets = data
        .sources
        .iter()
        .map(|ds| {
            Ok(EvalSet {
                name: ds.name.clone(),
                prompts: split_prompts(vocab, ds, Split::Test, cfg.eval_limit, cfg.data_seed)?,
                in_domain: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if cfg.ood_leads > 0 {
        let controls: Vec<Vec<(String, String)>> = fam.labels.iter().map(|l| vec![(fam.attribute.clone(), l.clone())]).collect();
        sets.push(EvalSet {
            name: OOD_SET.into(),
            prompts: ood_prompts(vocab, &controls, cfg.ood_leads, Prng::new(cfg.data_seed).derive(0x00D).seed())?,
            in_domain: false,
        });
    }
    Ok(sets)
}

/// One table row: which datasets' adapters to attach and how to combine them.
/// Dataset index `m` is the combined dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSpec {
    pub label: String,
    pub technique: String,
    pub subset: String,
    pub datasets: Vec<usize>,
    pub strategy: Option<CompositionStrategy>,
}

/// Rows of a family table in order: raw, each dataset, combined, compositions.
pub fn family_rows(fam: &FamilyConfig, techniques: &[CompositionStrategy]) -> Vec<RowSpec> {
    let m = fam.source.len();
    let mut rows = vec![RowSpec {
        label: "raw".into(),
        technique: "none".into(),
        subset: "-".into(),
        datasets: Vec::new(),
        strategy: None,
    }];
    for (i, s) in fam.source.iter().enumerate() {
        rows.push(RowSpec {
            label: s.name.clone(),
            technique: "single".into(),
            subset: (i + 1).to_string(),
            datasets: vec![i],
            strategy: None,
        });
    }
    rows.push(RowSpec {
        label: fam.combined_name(),
        technique: "combined-data".into(),
        subset: "-".into(),
        datasets: vec![m],
        strategy: None,
    });
    for (t, subset) in enumerate_compositions(m, techniques) {
        let label = subset_label(&subset);
        rows.push(RowSpec {
            label: format!("{t}:{label}"),
            technique: t.to_string(),
            subset: label,
            datasets: subset,
            strategy: Some(t),
        });
    }
    rows
}

/// Selected adapters per dataset of a family for one seed (sources, then combined).
fn load_family_adapters(
    cfg: &StudyConfig,
    vocab: &Vocab,
    out: &Path,
    host: &mut HostModel,
    data: &FamilyData,
    ensemble: &[OracleClassifier],
    seed: u64,
    train_missing: bool,
    missing: &mut Vec<String>,
) -> Result<Option<Vec<Vec<LowRankAdapter>>>> {
    let mut loaded = Vec::new();
    for ds in data.all() {
        let dir = run_dir(out, &ds.name, seed);
        match load_selected(&dir) {
            Ok((_, adapters)) => loaded.push(adapters),
            Err(Error::MissingArtifact(what)) if train_missing => {
                info!("{what} missing, training");
                train_and_write(cfg, vocab, host, ds, ensemble, seed, &dir)?;
                loaded.push(load_selected(&dir)?.1);
            }
            Err(Error::MissingArtifact(what)) => missing.push(format!("{} seed {seed} ({what})", ds.name)),
            Err(e) => return Err(e),
        }
    }
    Ok((loaded.len() == data.sources.len() + 1).then_some(loaded))
}

fn metric_values(r: &MetricReport) -> [f64; 5] {
    [r.distinct[0], r.distinct[1], r.distinct[2], r.slor, r.ce]
}

fn aggregate(specs: &[RowSpec], columns: Vec<String>, per_seed: &[Vec<Vec<f64>>]) -> ResultsTable {
    let rows = specs
        .iter()
        .enumerate()
        .map(|(ri, spec)| {
            let (mean, std) = (0..columns.len())
                .map(|c| mean_std(&per_seed.iter().map(|seed| seed[ri][c]).collect::<Vec<_>>()))
                .unzip();
            TableRow {
                label: spec.label.clone(),
                technique: spec.technique.clone(),
                subset: spec.subset.clone(),
                mean,
                std,
            }
        })
        .collect();
    ResultsTable { columns, rows }
}

fn family_corpus(data: &FamilyData) -> impl Iterator<Item = &[TokenId]> {
    data.sources.iter().flat_map(|d| d.train.iter().map(|t| t.tokens.as_slice()))
}

fn write_table(out: &Path, name: &str, table: &ResultsTable) -> Result<()> {
    let dir = out.join(TABLES_DIR);
    create_dir(&dir)?;
    for (suffix, body) in [
        ("mean.csv", table.to_csv(Stat::Mean)?),
        ("std.csv", table.to_csv(Stat::Std)?),
        ("txt", table.render_text()),
    ] {
        let path = dir.join(format!("{name}.{suffix}"));
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Evaluates every row of every family table (and the multi-attribute table when
/// enabled) over all seeds and writes the tables. Returns `(name, table)` pairs.
pub fn run_study(cfg: &StudyConfig, out: &Path, train_missing: bool) -> Result<Vec<(String, ResultsTable)>> {
    cfg.validate()?;
    let vocab = Vocab::standard();
    let mut host = build_host(cfg)?;
    let families = (0..cfg.family.len())
        .map(|fi| load_or_generate(cfg, &vocab, out, fi, train_missing))
        .collect::<Result<Vec<_>>>()?;
    let ensembles = cfg
        .family
        .iter()
        .map(|f| family_ensemble(&vocab, f))
        .collect::<Result<Vec<_>>>()?;

    let mut missing = Vec::new();
    // adapters[seed][family][dataset]
    let mut adapters = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut per_family = Vec::with_capacity(families.len());
        for (fi, data) in families.iter().enumerate() {
            let loaded = load_family_adapters(
                cfg,
                &vocab,
                out,
                &mut host,
                data,
                &ensembles[fi],
                seed,
                train_missing,
                &mut missing,
            )?;
            per_family.push(loaded.unwrap_or_default());
        }
        adapters.push(per_family);
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "trained runs missing (rerun with --train-missing): {}",
            missing.join("; ")
        )));
    }

    let mut tables = Vec::new();
    for (fi, fam) in cfg.family.iter().enumerate() {
        let data = &families[fi];
        let corpus: Vec<&[TokenId]> = family_corpus(data).collect();
        let eval = Evaluator::new(cfg, host.clone(), &corpus)?;
        let sets = family_eval_sets(cfg, &vocab, fi, data)?;
        let specs = family_rows(fam, &cfg.techniques);
        let names: Vec<String> = sets.iter().map(|s| s.name.clone()).collect();
        let n_in = sets.iter().filter(|s| s.in_domain).count();
        let columns = single_columns(&names, n_in);
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        for (si, &seed) in cfg.seeds.iter().enumerate() {
            let sets_adapters = &adapters[si][fi];
            let mut rows = Vec::with_capacity(specs.len());
            for spec in &specs {
                let attached: Vec<&LowRankAdapter> = spec.datasets.iter().flat_map(|&d| &sets_adapters[d]).collect();
                let model = eval.compose(&attached, spec.strategy)?;
                let mut values = Vec::with_capacity(columns.len());
                let mut ces = Vec::with_capacity(sets.len());
                for (ei, set) in sets.iter().enumerate() {
                    let r = eval.report_single(&model, &set.prompts, &ensembles[fi], eval_seed(seed, ei))?;
                    values.extend(metric_values(&r));
                    ces.push((set.in_domain, r.ce));
                }
                if n_in > 0 {
                    values.push(ces.iter().filter(|c| c.0).map(|c| c.1).sum::<f64>() / n_in as f64);
                }
                values.push(ces.iter().map(|c| c.1).sum::<f64>() / ces.len() as f64);
                info!("{} seed {seed} {}: ce_avg {:.2}", fam.attribute, spec.label, values[values.len() - 1]);
                rows.push(values);
            }
            per_seed.push(rows);
        }
        let table = aggregate(&specs, columns, &per_seed);
        write_table(out, &fam.attribute, &table)?;
        tables.push((fam.attribute.clone(), table));
    }

    if cfg.multi_attribute && cfg.family.len() >= 2 {
        let table = multi_table(cfg, &vocab, &host, &families, &ensembles, &adapters)?;
        write_table(out, MULTI_TABLE, &table)?;
        tables.push((MULTI_TABLE.to_string(), table));
    }
    Ok(tables)
}

/// Rows of the multi-attribute table: raw host, then per technique the composition
/// of the combined-dataset adapters and the composition of every source adapter.
pub fn multi_rows(cfg: &StudyConfig) -> Vec<RowSpec> {
    let mut rows = vec![RowSpec {
        label: "raw".into(),
        technique: "none".into(),
        subset: "-".into(),
        datasets: Vec::new(),
        strategy: None,
    }];
    for &t in &cfg.techniques {
        for subset in ["combined-modules", "individual-modules"] {
            rows.push(RowSpec {
                label: format!("{t}:{subset}"),
                technique: t.to_string(),
                subset: subset.into(),
                datasets: Vec::new(),
                strategy: Some(t),
            });
        }
    }
    rows
}

/// Every combination of one label per family, in config order.
pub fn multi_controls(cfg: &StudyConfig) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for fam in &cfg.family {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                fam.labels.iter().map(move |l| {
                    let mut c = prefix.clone();
                    c.push((fam.attribute.clone(), l.clone()));
                    c
                })
            })
            .collect();
    }
    out
}

fn multi_table(
    cfg: &StudyConfig,
    vocab: &Vocab,
    host: &HostModel,
    families: &[FamilyData],
    ensembles: &[Vec<OracleClassifier>],
    adapters: &[Vec<Vec<Vec<LowRankAdapter>>>],
) -> Result<ResultsTable> {
    let attributes: Vec<String> = cfg.family.iter().map(|f| f.attribute.clone()).collect();
    let corpus: Vec<&[TokenId]> = families.iter().flat_map(family_corpus).collect();
    let eval = Evaluator::new(cfg, host.clone(), &corpus)?;
    let leads = cfg.ood_leads.max(1);
    let prompts = ood_prompts(vocab, &multi_controls(cfg), leads, Prng::new(cfg.data_seed).derive(0x3417).seed())?;
    let single_sets = families
        .iter()
        .enumerate()
        .map(|(fi, data)| family_eval_sets(cfg, vocab, fi, data))
        .collect::<Result<Vec<_>>>()?;
    let specs = multi_rows(cfg);
    let columns = multi_columns(&attributes);
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let mut rows = Vec::with_capacity(specs.len());
        for spec in &specs {
            let attached: Vec<&LowRankAdapter> = match spec.subset.as_str() {
                "combined-modules" => adapters[si].iter().flat_map(|fam| fam.last().into_iter().flatten()).collect(),
                "individual-modules" => adapters[si]
                    .iter()
                    .flat_map(|fam| fam[..fam.len() - 1].iter().flatten())
                    .collect(),
                _ => Vec::new(),
            };
            let model = eval.compose(&attached, spec.strategy)?;
            let r = eval.report_multi(&model, &prompts, ensembles, eval_seed(seed, 0))?;
            let mut values: Vec<f64> = metric_values(&r).to_vec();
            values.extend(&r.ce_breakdown);
            for (fi, sets) in single_sets.iter().enumerate() {
                let mut total = 0.0;
                let in_domain: Vec<&EvalSet> = sets.iter().filter(|s| s.in_domain).collect();
                for (ei, set) in in_domain.iter().enumerate() {
                    let recs = eval.records(&model, &set.prompts, eval_seed(seed, ei + 1))?;
                    total += crate::metrics::ce_single(&recs, &ensembles[fi])?.0;
                }
                values.push(total / in_domain.len() as f64);
            }
            info!("multi seed {seed} {}: ce {:.2}", spec.label, r.ce);
            rows.push(values);
        }
        per_seed.push(rows);
    }
    Ok(aggregate(&specs, columns, &per_seed))
}
