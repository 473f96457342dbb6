use std::fmt;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{anyhow, Context as _};
use dataportrait::ingest::{build_portrait, estimate_elements, DocumentSource, Input, Record, SourceFormat};
use dataportrait::query::{check_document, OverlapAccumulator};
use dataportrait::report::{overlap_table_header, overlap_table_row, overlap_table_sum, CheckResponse};
use dataportrait::sketch::{plan_parameters, BloomFilter, HEADER_LEN};
use dataportrait_service::{serve as serve_http, Mounted, Registry};

use crate::{BuildArgs, BuildFormat, CheckArgs, DatasetFormat, ReportArgs, ServeArgs, StatsArgs};

pub const EXIT_NOT_MEMBER: u8 = 3;

pub struct Context {
    pub quiet: bool,
    pub threads: usize,
}

/// Usage errors exit 2, everything else 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult = Result<ExitCode, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn portrait_name(path: &Path) -> String {
    let file = path.file_name().and_then(|s| s.to_str()).unwrap_or("portrait");
    // "pile.dpbf" -> "pile"
    file.split('.').next().filter(|s| !s.is_empty()).unwrap_or(file).to_string()
}

fn load_portrait(path: &Path) -> Result<BloomFilter, CliError> {
    BloomFilter::load(path).with_context(|| format!("cannot load portrait {}", path.display())).map_err(CliError::from)
}

pub fn build(ctx: &Context, args: BuildArgs) -> CliResult {
    let stride = args.stride.unwrap_or(args.width);
    if args.width == 0 {
        return Err(usage("--width must be >= 1"));
    }
    if stride == 0 || stride > args.width {
        return Err(usage(format!("--stride must be in 1..={}", args.width)));
    }
    if !(args.fpr > 0.0 && args.fpr < 1.0) {
        return Err(usage("--fpr must be in (0, 1)"));
    }
    let shards = args.shards.unwrap_or(ctx.threads);
    if shards == 0 {
        return Err(usage("--shards must be >= 1"));
    }
    let expected: Option<u64> = match args.expected_elements.as_str() {
        "auto" => None,
        n => match n.parse::<u64>() {
            Ok(v) if v >= 1 => Some(v),
            _ => return Err(usage("--expected-elements must be a positive integer or `auto`")),
        },
    };
    let format = match args.format {
        BuildFormat::Jsonl => SourceFormat::jsonl(args.field.clone()),
        BuildFormat::Text => SourceFormat::Text,
        BuildFormat::Lines => SourceFormat::Lines,
    };
    let source = DocumentSource::new(format, args.input.iter().map(|s| Input::parse(s)).collect());
    if expected.is_none() && source.reads_stdin() {
        return Err(usage("--expected-elements auto needs to read the input twice; pass a count when reading stdin"));
    }

    let expected = match expected {
        Some(n) => n,
        None => {
            let n = estimate_elements(&source, args.width, stride, 1.0, args.seed)?;
            if !ctx.quiet {
                eprintln!("estimated {n} tiles");
            }
            n.max(1)
        }
    };
    let params = plan_parameters(expected, args.fpr)?.with_ngrams(args.width, stride)?.with_seed(args.seed);
    let (filter, report) = build_portrait(&source, &params, shards)?;
    filter.save(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?;

    if !ctx.quiet {
        let p = filter.params();
        println!("wrote {}", args.out.display());
        println!("documents:        {}", report.documents);
        println!("malformed:        {}", report.malformed_records);
        println!("tiles hashed:     {}", report.tiles_hashed);
        println!("chars in:         {}", report.chars_in);
        println!("elapsed:          {:.3} s", report.elapsed_secs);
        println!("width/stride:     {}/{}", p.ngram_width, p.stride);
        println!("m_bits, k:        {}, {}", p.m_bits, p.k_hashes);
        println!("planned elements: {expected}");
        println!("bits/element:     {:.3}", p.m_bits as f64 / expected as f64);
        println!("saturation:       {:.4}", report.final_saturation);
        println!("file size:        {} bytes", filter.encoded_len());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn check(_ctx: &Context, args: CheckArgs) -> CliResult {
    let filter = load_portrait(&args.portrait)?;
    let document = match &args.file {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).context("cannot read stdin")?;
            s
        }
    };
    let mounted = Mounted {
        name: portrait_name(&args.portrait),
        info: dataportrait::report::PortraitInfo::describe(&portrait_name(&args.portrait), &filter),
        filter,
    };
    let response: CheckResponse = dataportrait_service::run_check(&mounted, &document, false);
    let mut out = io::stdout().lock();
    if args.json {
        writeln!(out, "{}", response.to_json())?;
    } else {
        write!(out, "{}", response.render_text())?;
    }
    Ok(if response.is_member { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NOT_MEMBER) })
}

pub fn report(ctx: &Context, args: ReportArgs) -> CliResult {
    let filter = load_portrait(&args.portrait)?;
    let format = match args.format {
        DatasetFormat::Jsonl => SourceFormat::jsonl(args.field.clone()),
        DatasetFormat::Lines => SourceFormat::Lines,
    };
    let mut out = io::stdout().lock();
    writeln!(out, "{}", overlap_table_header())?;
    let (mut total_instances, mut total_secs) = (0u64, 0.0f64);
    for path in &args.dataset {
        let source = DocumentSource::new(format.clone(), vec![Input::Path(path.clone())]);
        let mut acc = OverlapAccumulator::default();
        let mut malformed = 0u64;
        source.for_each_record(|r| {
            match r {
                Record::Document(doc) => {
                    let started = Instant::now();
                    let report = check_document(&filter, &doc);
                    acc.add_seconds(started.elapsed().as_secs_f64());
                    acc.add(&report);
                }
                Record::Malformed { .. } => malformed += 1,
            }
            Ok(())
        })?;
        if malformed > 0 && !ctx.quiet {
            eprintln!("{}: skipped {malformed} malformed records", path.display());
        }
        let name = portrait_name(path);
        match acc.finish(name.clone()) {
            Ok(summary) => {
                total_instances += summary.instances;
                total_secs += summary.total_query_seconds;
                writeln!(out, "{}", overlap_table_row(&summary))?;
            }
            Err(e) => return Err(CliError::Runtime(anyhow!("{}: {e}", path.display()))),
        }
    }
    writeln!(out, "{}", overlap_table_sum(total_instances, total_secs))?;
    Ok(ExitCode::SUCCESS)
}

pub fn stats(_ctx: &Context, args: StatsArgs) -> CliResult {
    let filter = load_portrait(&args.portrait)?;
    let file_size = std::fs::metadata(&args.portrait)?.len();
    let p = filter.params();
    let mut out = io::stdout().lock();
    writeln!(out, "file:            {}", args.portrait.display())?;
    writeln!(out, "file size:       {file_size} bytes (header {HEADER_LEN})")?;
    writeln!(out, "format version:  {}", dataportrait::sketch::FORMAT_VERSION)?;
    writeln!(out, "hash algorithm:  {}", dataportrait::sketch::HASH_XXH3_DOUBLE)?;
    writeln!(out, "seed:            {}", p.seed)?;
    writeln!(out, "ngram width:     {}", p.ngram_width)?;
    writeln!(out, "stride:          {}", p.stride)?;
    writeln!(out, "k_hashes:        {}", p.k_hashes)?;
    writeln!(out, "m_bits:          {}", p.m_bits)?;
    writeln!(out, "inserted:        {}", filter.inserted())?;
    match filter.bits_per_element() {
        Some(b) => writeln!(out, "bits/element:    {b:.3}")?,
        None => writeln!(out, "bits/element:    n/a")?,
    }
    writeln!(out, "saturation:      {:.6}", filter.saturation())?;
    writeln!(out, "estimated fpr:   {:.3e}", filter.estimated_fpr())?;
    Ok(ExitCode::SUCCESS)
}

fn parse_mount(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            (portrait_name(&path), path)
        }
    }
}

pub fn serve(ctx: &Context, args: ServeArgs) -> CliResult {
    let level = if ctx.quiet { "warn" } else { "info" };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(io::stderr)
        .try_init();

    let mounts: Vec<(String, PathBuf)> = args.portrait.iter().map(|s| parse_mount(s)).collect();
    let registry = Arc::new(
        Registry::new(mounts.iter().map(|(n, _)| n.clone()).collect(), args.max_doc_bytes)
            .map_err(|e| usage(e.to_string()))?,
    );
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.threads)
        .enable_all()
        .build()
        .context("cannot start async runtime")?;

    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("cannot bind {}", args.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);

        let failure: Arc<Mutex<Option<String>>> = Arc::default();
        let failed = Arc::new(tokio::sync::Notify::new());
        {
            let (registry, failure, failed) = (registry.clone(), failure.clone(), failed.clone());
            tokio::task::spawn_blocking(move || {
                for (name, path) in &mounts {
                    if let Err(e) = registry.load(name, path) {
                        *failure.lock().unwrap() = Some(e.to_string());
                        failed.notify_one();
                        return;
                    }
                    tracing::info!(%name, path = %path.display(), "portrait mounted");
                }
            });
        }

        let shutdown = async move {
            #[cfg(unix)]
            let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
                .expect("install SIGTERM handler");
            #[cfg(unix)]
            let terminate = term.recv();
            #[cfg(not(unix))]
            let terminate = std::future::pending::<Option<()>>();
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = terminate => {}
                _ = failed.notified() => {}
            }
        };
        serve_http(listener, registry, shutdown).await?;
        if let Some(msg) = failure.lock().unwrap().take() {
            return Err(CliError::Runtime(anyhow!("refusing to serve: {msg}")));
        }
        eprintln!("shut down");
        Ok(ExitCode::SUCCESS)
    })
}
