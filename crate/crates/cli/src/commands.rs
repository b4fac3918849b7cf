use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sentivote::explain::{render_attribution, RenderFormat};
use sentivote::metrics::ReportBundle;
use sentivote::pipeline::{
    self, fuse_probability_files, write_verdicts, Predictor, RunConfig, RunManifest, Toggle,
};
use sentivote::Error;
use serde_json::json;

use crate::{AblateArgs, Cli, Command, EnsembleArgs, ExplainArgs, Failure, GlobalArgs, InputArgs, ReportArgs};

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    match cli.command {
        Command::Prepare => manifest_summary(g, pipeline::run_prepare(&config(g)?)?),
        Command::Train => manifest_summary(g, pipeline::run_train(&config(g)?)?),
        Command::Predict(args) => predict(g, args),
        Command::Evaluate => {
            let bundle = pipeline::run_evaluate(&config(g)?)?;
            if g.json {
                print_json(&bundle)
            } else {
                print!("{}", bundle.render_table());
                Ok(())
            }
        }
        Command::Ensemble(args) => ensemble(g, args),
        Command::Explain(args) => explain(g, args),
        Command::Ablate(args) => ablate(g, args),
        Command::Report(args) => report(g, args),
    }
}

fn config(g: &GlobalArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_env()?,
    };
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &g.output_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Usage(format!("cannot serialize output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn manifest_summary(g: &GlobalArgs, manifest: RunManifest) -> Outcome {
    if g.json {
        return print_json(&manifest);
    }
    println!(
        "train documents: {}  test documents: {}",
        manifest.split.train.len(),
        manifest.split.test.len()
    );
    println!("vocabulary: {}", manifest.vocabulary_hash);
    for (name, entry) in &manifest.artifacts {
        println!("{}  {name}", entry.sha256);
    }
    for t in &manifest.timings {
        println!("{:>9.3}s  {}", t.seconds, t.stage);
    }
    Ok(())
}

fn read_input(text: Option<String>, file: Option<PathBuf>) -> Result<String, Failure> {
    let input = match (text, file) {
        (Some(text), _) => text,
        (None, Some(path)) if path == Path::new("-") => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Failure::Usage(format!("cannot read standard input: {e}")))?;
            buf
        }
        (None, Some(path)) => std::fs::read_to_string(&path).map_err(|e| {
            Failure::Run(Error::Io {
                path: path.clone(),
                source: e,
            })
        })?,
        (None, None) => return Err(Failure::Usage("give the review with --text or --file".into())),
    };
    if input.trim().is_empty() {
        return Err(Failure::Usage("the review text is empty".into()));
    }
    Ok(input)
}

fn predict(g: &GlobalArgs, args: InputArgs) -> Outcome {
    let text = read_input(args.text, args.file)?;
    let cfg = config(g)?;
    let predictor = Predictor::load(&cfg)?;
    let record = predictor.predict(0, &text)?;
    let attribution = args
        .explain
        .as_deref()
        .map(|target| predictor.explain(&text, target))
        .transpose()?;
    if g.json {
        let mut value = serde_json::to_value(&record)
            .map_err(|e| Failure::Usage(format!("cannot serialize verdict: {e}")))?;
        if let Some(attr) = &attribution {
            value["attribution"] = json!(attr);
        }
        return print_json(&value);
    }
    println!("label: {}", record.label);
    println!(
        "{:<20}  P(negative) {:.4}  P(positive) {:.4}",
        "combined",
        record.combined.negative(),
        record.combined.positive()
    );
    for (model, p) in &record.per_model {
        println!(
            "{model:<20}  P(negative) {:.4}  P(positive) {:.4}",
            p.negative(),
            p.positive()
        );
    }
    if let Some(attr) = attribution {
        println!();
        print!("{}", render_attribution(&attr, RenderFormat::Text)?);
    }
    Ok(())
}

fn explain(g: &GlobalArgs, args: ExplainArgs) -> Outcome {
    let text = read_input(args.text, args.file)?;
    let cfg = config(g)?;
    let predictor = Predictor::load(&cfg)?;
    let attr = predictor.explain(&text, &args.model)?;
    if let Some(path) = &args.svg {
        let svg = render_attribution(&attr, RenderFormat::SvgBar)?;
        std::fs::write(path, svg).map_err(|e| {
            Failure::Run(Error::Io {
                path: path.clone(),
                source: e,
            })
        })?;
    }
    let format = if g.json {
        RenderFormat::Json
    } else {
        args.format.into()
    };
    let rendered = render_attribution(&attr, format)?;
    if rendered.is_empty() {
        eprintln!("no features of the review are in the vocabulary");
    }
    print!("{rendered}");
    if !rendered.is_empty() && !rendered.ends_with('\n') {
        println!();
    }
    Ok(())
}

fn ensemble(g: &GlobalArgs, args: EnsembleArgs) -> Outcome {
    let (ensemble, records) = fuse_probability_files(&args.files, args.weights)?;
    match &args.out {
        Some(path) => {
            write_verdicts(path, &records)?;
            if g.json {
                print_json(&json!({
                    "models": ensemble.model_ids(),
                    "weights": ensemble.weights(),
                    "verdicts": records.len(),
                    "out": path,
                }))?;
            } else {
                println!("{} verdicts written to {}", records.len(), path.display());
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for record in &records {
                let line = serde_json::to_string(record)
                    .map_err(|e| Failure::Usage(format!("cannot serialize verdict: {e}")))?;
                writeln!(out, "{line}")
                    .map_err(|e| Failure::Usage(format!("cannot write output: {e}")))?;
            }
        }
    }
    Ok(())
}

fn ablate(g: &GlobalArgs, args: AblateArgs) -> Outcome {
    let toggles: BTreeSet<Toggle> = if args.baseline_only {
        BTreeSet::new()
    } else if args.toggles.is_empty() {
        Toggle::ALL.into_iter().collect()
    } else {
        args.toggles.into_iter().collect()
    };
    let report = pipeline::run_ablation(&config(g)?, &toggles)?;
    if g.json {
        print_json(&report)
    } else {
        print!("{}", report.render_table());
        Ok(())
    }
}

fn report(g: &GlobalArgs, args: ReportArgs) -> Outcome {
    let path = match args.bundle {
        Some(path) => path,
        None => config(g)?.output.dir.join("reports.json"),
    };
    let bundle = ReportBundle::load(&path)?;
    if g.json {
        return print_json(&bundle.ranked());
    }
    print!("{}", bundle.render_table());
    match &args.csv {
        Some(csv) => std::fs::write(csv, bundle.plot_csv()).map_err(|e| {
            Failure::Run(Error::Io {
                path: csv.clone(),
                source: e,
            })
        })?,
        None => {
            println!();
            print!("{}", bundle.plot_csv());
        }
    }
    Ok(())
}
