use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bitext::corpus_io::{
    read_bucc_corpus, read_embeddings, read_gold, read_pairs, write_corpus, write_embeddings,
    write_gold, write_pairs,
};
use bitext::embed::embed_corpus;
use bitext::eval::{generate_synthetic, score_pairs, tune_threshold};
use bitext::mine::{
    best_matches, filter_by_threshold, length_histogram, mine, score_bitext, sweep,
    threshold_grid, MineOptions,
};
use bitext::preprocess::{
    bundled_seed_samples, preprocess_bitext, preprocess_corpus, train_lid, train_lid_from_files,
};
use bitext::simsearch::{build_ivf_with, default_nlist, knn_ivf, IvfBuildParams, DEFAULT_NPROBE};
use bitext::{
    BpeModel, Corpus, EmbeddingMatrix, EmbeddingProvider, EvalReport, HashedEncoder, IvfIndex,
    LidModel, PreprocessConfig, SearchParams, SentenceRecord, SyntheticSpec, Threshold,
};
use log::info;

use crate::args::*;
use crate::error::{CliError, CliResult};

pub struct Context {
    pub seed: u64,
}

/// Language tag from a file name: the extension unless it is a generic one
/// (`de-en.train.de` gives `de`), otherwise the stem (`src.tsv` gives `src`).
pub fn infer_lang(path: &Path) -> String {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if !ext.is_empty() && !matches!(ext, "tsv" | "txt" | "gz") {
        return ext.to_string();
    }
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or("und")
        .to_string()
}

fn read_corpus(path: &Path, lang: Option<&str>) -> CliResult<Corpus> {
    let lang = lang.map_or_else(|| infer_lang(path), str::to_string);
    let corpus = read_bucc_corpus(path, &lang)?;
    info!("read\t{}\t{} sentences\tlang={}", path.display(), corpus.len(), lang);
    Ok(corpus)
}

fn read_matrix(path: &Path) -> CliResult<EmbeddingMatrix> {
    let m = read_embeddings(path)?;
    info!("read\t{}\t{} x {}", path.display(), m.len(), m.dim());
    Ok(m)
}

fn io_err(path: &Path, source: io::Error) -> CliError {
    bitext::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn ensure_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
        }
        _ => Ok(()),
    }
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, text).map_err(|e| io_err(p, e))
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn threshold(value: f32) -> CliResult<Threshold> {
    Ok(Threshold::new(value)?)
}

fn format_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Tsv => report.to_tsv(),
        ReportFormat::Json => {
            let mut line = serde_json::to_string(report).expect("report serializes");
            line.push('\n');
            line
        }
    }
}

fn log_report(report: &EvalReport) {
    info!(
        "eval\tP={:.1}\tR={:.1}\tF1={:.1}\ttp={}\tpredicted={}\tgold={}",
        report.precision,
        report.recall,
        report.f1,
        report.true_positives,
        report.predicted,
        report.gold
    );
}

fn load_lid(specs: &[String]) -> CliResult<LidModel> {
    if specs.is_empty() {
        return Ok(train_lid(bundled_seed_samples())?);
    }
    let mut files = Vec::with_capacity(specs.len());
    for s in specs {
        let Some((tag, path)) = s.split_once('=') else {
            return Err(CliError::usage(format!("--lid-train expects TAG=PATH, got {s:?}")));
        };
        files.push((tag.to_string(), PathBuf::from(path)));
    }
    Ok(train_lid_from_files(&files)?)
}

pub fn preprocess(a: &PreprocessArgs) -> CliResult {
    if a.outputs.len() != a.inputs.len() {
        return Err(CliError::usage("preprocess needs one -o per input"));
    }
    if !a.lang.is_empty() && a.lang.len() != a.inputs.len() {
        return Err(CliError::usage("preprocess needs one --lang per input"));
    }
    let cfg = PreprocessConfig {
        max_commas: a.max_commas,
        max_words: a.max_words,
        lid_enabled: !a.no_lid,
        lid_min_confidence: a.lid_min_conf,
    };
    cfg.validate()?;
    let corpora = a
        .inputs
        .iter()
        .enumerate()
        .map(|(i, p)| read_corpus(p, a.lang.get(i).map(String::as_str)))
        .collect::<CliResult<Vec<_>>>()?;

    let model = if cfg.lid_enabled {
        let m = load_lid(&a.lid_train)?;
        for c in &corpora {
            if !m.languages().iter().any(|l| l == c.lang()) {
                return Err(bitext::Error::Validation(format!(
                    "language {:?} is not covered by the language-id model ({}); use --lid-train or --no-lid",
                    c.lang(),
                    m.languages().join(", ")
                ))
                .into());
            }
        }
        Some(m)
    } else {
        None
    };

    let (kept, report) = match corpora.as_slice() {
        [c] => {
            let (k, r) = preprocess_corpus(c, &cfg, model.as_ref())?;
            (vec![k], r)
        }
        [s, t] => {
            let (ks, kt, r) = preprocess_bitext(s, t, &cfg, model.as_ref())?;
            (vec![ks, kt], r)
        }
        _ => unreachable!("clap limits inputs to 1..=2"),
    };
    for (corpus, path) in kept.iter().zip(&a.outputs) {
        ensure_parent(path)?;
        write_corpus(corpus, path)?;
    }
    let tsv = report.to_tsv();
    for line in tsv.lines() {
        info!("preprocess\t{line}");
    }
    if let Some(p) = &a.report {
        emit(Some(p), &tsv)?;
    }
    Ok(())
}

fn lowercased(corpus: Corpus) -> CliResult<Corpus> {
    let lang = corpus.lang().to_string();
    let records = corpus
        .into_records()
        .into_iter()
        .map(|r| SentenceRecord::new(r.id, r.lang, r.text.to_lowercase()))
        .collect();
    Ok(Corpus::new(lang, records)?)
}

pub fn bpe_learn(a: &BpeLearnArgs) -> CliResult {
    let mut corpora = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let c = read_corpus(p, None)?;
        corpora.push(if a.lowercase { lowercased(c)? } else { c });
    }
    let model = bitext::bpe::learn_bpe(&corpora, a.merges)?;
    info!("bpe-learn\t{} merges learned\t{} requested", model.merges().len(), a.merges);
    ensure_parent(&a.output)?;
    model.save(&a.output)?;
    Ok(())
}

pub fn bpe_apply(a: &BpeApplyArgs) -> CliResult {
    let model = BpeModel::load(&a.model)?;
    let corpus = read_corpus(&a.input, None)?;
    let lang = corpus.lang().to_string();
    let records = corpus
        .into_records()
        .into_iter()
        .map(|r| {
            let text = if a.lowercase { r.text.to_lowercase() } else { r.text };
            SentenceRecord::new(r.id, lang.as_str(), model.apply(&text).join(" "))
        })
        .collect();
    let out = Corpus::new(lang.as_str(), records)?;
    let mut buf = Vec::new();
    bitext::corpus_io::write_corpus_to(&out, &mut buf).map_err(|e| io_err(&a.input, e))?;
    emit(a.output.as_deref(), &String::from_utf8(buf).expect("corpus text is UTF-8"))
}

pub fn embed(a: &EmbedArgs, ctx: &Context) -> CliResult {
    let corpus = read_corpus(&a.input, a.lang.as_deref())?;
    let provider = match a.mode {
        EmbedMode::Hashed => {
            let mut enc = HashedEncoder::new(a.dim, ctx.seed)?.with_lowercase(a.lowercase);
            if let Some(p) = &a.bpe {
                enc = enc.with_bpe(Arc::new(BpeModel::load(p)?));
            }
            EmbeddingProvider::Hashed(enc)
        }
        EmbedMode::File => {
            let path = a.vectors.as_ref().expect("clap requires --vectors in file mode");
            EmbeddingProvider::FileBacked(read_matrix(path)?)
        }
    };
    let m = embed_corpus(&provider, &corpus)?;
    info!("embed\t{} sentences\tdim={}", m.len(), m.dim());
    ensure_parent(&a.output)?;
    write_embeddings(&m, &a.output)?;
    Ok(())
}

pub fn index_build(a: &IndexBuildArgs, ctx: &Context) -> CliResult {
    let targets = read_matrix(&a.input)?;
    let params = IvfBuildParams {
        nlist: a.nlist.unwrap_or_else(|| default_nlist(targets.len())),
        iters: a.iters,
        seed: ctx.seed,
        train_per_list: a.train_per_list,
    };
    let index = build_ivf_with(&targets, &params)?;
    let lengths = index.list_lengths();
    info!(
        "index-build\tnlist={}\ttrained_on={}\tlargest_list={}",
        index.nlist(),
        index.trained_on(),
        lengths.iter().max().copied().unwrap_or(0)
    );
    ensure_parent(&a.output)?;
    index.write(&a.output)?;
    Ok(())
}

fn search_params(k: usize, nprobe: Option<usize>, index: Option<&IvfIndex>) -> SearchParams {
    let mut p = SearchParams::with_k(k);
    p.nprobe = match (nprobe, index) {
        (Some(n), _) => n,
        (None, Some(idx)) => DEFAULT_NPROBE.min(idx.nlist()),
        (None, None) => DEFAULT_NPROBE,
    };
    p
}

pub fn index_search(a: &IndexSearchArgs) -> CliResult {
    let index = IvfIndex::read(&a.index)?;
    let queries = read_matrix(&a.queries)?;
    let params = search_params(a.k, a.nprobe, Some(&index));
    let lists = knn_ivf(&index, &queries, &params)?;
    let mut out = String::from("query\trank\ttarget\tdistance\n");
    for (q, list) in lists.iter().enumerate() {
        for (rank, n) in list.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                queries.ids()[q],
                rank + 1,
                index.ids()[n.index],
                n.distance
            ));
        }
    }
    info!("index-search\t{} queries\tk={}\tnprobe={}", queries.len(), params.k, params.nprobe);
    emit(a.output.as_deref(), &out)
}

pub fn filter(a: &FilterArgs) -> CliResult {
    let t = threshold(a.threshold)?;
    let src = read_corpus(&a.src, a.src_lang.as_deref())?;
    let tgt = read_corpus(&a.tgt, a.tgt_lang.as_deref())?;
    let es = read_matrix(&a.src_emb)?;
    let et = read_matrix(&a.tgt_emb)?;
    let scored = score_bitext(&src, &tgt, &es, &et)?;
    let kept = filter_by_threshold(&scored, t);
    info!("filter\t{} pairs\t{} kept at threshold {}", scored.len(), kept.len(), t.value());
    if let Some(p) = &a.scores {
        ensure_parent(p)?;
        write_pairs(&scored, p)?;
    }
    ensure_parent(&a.output)?;
    write_pairs(&kept, &a.output)?;

    if let (Some(ps), Some(pt)) = (&a.out_src, &a.out_tgt) {
        let mask: Vec<bool> = scored.iter().map(|p| t.accepts(p.distance)).collect();
        let pick = |c: &Corpus| -> CliResult<Corpus> {
            let records = c
                .iter()
                .zip(&mask)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect();
            Ok(Corpus::new(c.lang(), records)?)
        };
        ensure_parent(ps)?;
        write_corpus(&pick(&src)?, ps)?;
        ensure_parent(pt)?;
        write_corpus(&pick(&tgt)?, pt)?;
    }
    Ok(())
}

/// Reads the threshold column of a `tune` report written as TSV or JSON.
pub fn read_tuned_threshold(path: &Path) -> CliResult<f32> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parse_err = |line: usize, message: &str| -> CliError {
        bitext::Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
        .into()
    };
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let first = trimmed.lines().next().unwrap_or("");
        let v: serde_json::Value =
            serde_json::from_str(first).map_err(|e| parse_err(1, &e.to_string()))?;
        return v["threshold"]
            .as_f64()
            .map(|t| t as f32)
            .ok_or_else(|| parse_err(1, "report has no numeric threshold"));
    }
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty report"))?;
    let col = header
        .split('\t')
        .position(|h| h == "threshold")
        .ok_or_else(|| parse_err(1, "no threshold column"))?;
    let row = lines.next().ok_or_else(|| parse_err(2, "missing report row"))?;
    row.split('\t')
        .nth(col)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(2, "threshold is not a number"))
}

pub fn mine_cmd(a: &MineArgs) -> CliResult {
    let value = match &a.threshold_from {
        Some(p) => read_tuned_threshold(p)?,
        None => a.threshold,
    };
    let t = threshold(value)?;
    let src = read_matrix(&a.src_emb)?;
    let tgt = read_matrix(&a.tgt_emb)?;
    let index = a.ivf.as_ref().map(IvfIndex::read).transpose()?;
    let params = search_params(a.k, a.nprobe, index.as_ref());
    let pairs = if a.bucc {
        if a.bidirectional {
            return Err(CliError::usage("--bucc and --bidirectional cannot be combined"));
        }
        let best = best_matches(&src, &tgt, &params, index.as_ref())?;
        filter_by_threshold(&best, t)
    } else {
        let opts = MineOptions {
            search: params,
            threshold: t,
            bidirectional: a.bidirectional,
        };
        mine(&src, &tgt, &opts, index.as_ref())?
    };
    info!(
        "mine\t{} sources\t{} targets\tk={}\tthreshold={}\t{} pairs",
        src.len(),
        tgt.len(),
        params.k,
        t.value(),
        pairs.len()
    );
    ensure_parent(&a.output)?;
    write_pairs(&pairs, &a.output)?;
    Ok(())
}

pub fn sweep_cmd(a: &SweepArgs) -> CliResult {
    let pairs = read_pairs(&a.pairs)?;
    let grid = threshold_grid(a.from, a.to, a.step)?;
    let curve = sweep(&pairs, &grid)?;
    emit(a.output.as_deref(), &curve.to_tsv())
}

pub fn stats(c: &StatsCommand) -> CliResult {
    match c {
        StatsCommand::Lengths {
            input,
            lang,
            output,
        } => {
            let corpus = read_corpus(input, lang.as_deref())?;
            emit(output.as_deref(), &length_histogram(&corpus).to_tsv())
        }
    }
}

pub fn eval_cmd(a: &EvalArgs) -> CliResult {
    let mut pairs = read_pairs(&a.pairs)?;
    let gold = read_gold(&a.gold)?;
    let t = a.threshold.map(threshold).transpose()?;
    if let Some(t) = t {
        pairs = filter_by_threshold(&pairs, t);
    }
    let mut report = score_pairs(&pairs, &gold);
    if let Some(t) = t {
        report = report.with_threshold(t);
    }
    log_report(&report);
    emit(a.output.as_deref(), &format_report(&report, a.format))
}

pub fn tune(a: &TuneArgs) -> CliResult {
    let candidates = read_pairs(&a.candidates)?;
    let gold = read_gold(&a.gold)?;
    let (t, report) = tune_threshold(&candidates, &gold)?;
    info!("tune\tthreshold={:.6}", t.value());
    log_report(&report);
    emit(a.output.as_deref(), &format_report(&report, a.format))
}

/// Files written by `synth` into its output directory.
pub const SYNTH_FILES: [&str; 5] = ["src.tsv", "tgt.tsv", "src.bmem", "tgt.bmem", "gold.tsv"];

pub fn synth(a: &SynthArgs, ctx: &Context) -> CliResult {
    let mut spec = SyntheticSpec::new(
        a.n_src,
        a.n_tgt.unwrap_or(a.n_src),
        a.n_planted,
        a.dim,
        a.noise_sigma,
        ctx.seed,
    );
    spec.word_swap_prob = a.swap_prob;
    let data = generate_synthetic(&spec)?;
    let dir = &a.output;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_corpus(&data.src, dir.join(SYNTH_FILES[0]))?;
    write_corpus(&data.tgt, dir.join(SYNTH_FILES[1]))?;
    write_embeddings(&data.src_emb, dir.join(SYNTH_FILES[2]))?;
    write_embeddings(&data.tgt_emb, dir.join(SYNTH_FILES[3]))?;
    write_gold(&data.gold, dir.join(SYNTH_FILES[4]))?;
    info!(
        "synth\t{} sources\t{} targets\t{} planted\tdim={}\tseed={}",
        spec.n_src, spec.n_tgt, spec.n_planted, spec.dim, spec.seed
    );
    Ok(())
}

/// Runs one subcommand. Pipelines are handled by the caller.
pub fn dispatch(command: &Command, ctx: &Context) -> CliResult {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::BpeLearn(a) => bpe_learn(a),
        Command::BpeApply(a) => bpe_apply(a),
        Command::Embed(a) => embed(a, ctx),
        Command::IndexBuild(a) => index_build(a, ctx),
        Command::IndexSearch(a) => index_search(a),
        Command::Filter(a) => filter(a),
        Command::Mine(a) => mine_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Stats(c) => stats(c),
        Command::Eval(a) => eval_cmd(a),
        Command::Tune(a) => tune(a),
        Command::Synth(a) => synth(a, ctx),
        Command::Pipeline(_) => Err(CliError::usage("pipelines cannot be nested")),
    }
}
