//! Subcommand implementations. Each returns a [`Report`]: the JSON value
//! is the primary output and the text is a rendering of it.

use std::fmt::Write as _;
use std::path::Path;

use plugblend_core::eval::{
    equal_pair_configs, heatmap, heatmap_csv, heatmap_svg, parse_story_corpus, ppl_grid,
    shuffled_baseline, HeatmapReport, PplRow,
};
use plugblend_core::{
    compile_plan, generate_story_with, par, toy, ControlCode, ControlConfig, Error, LinePlan,
    Providers, SketchSet, Story,
};
use plugblend_server::{model_router, router, AppState, ModelBackend, SessionStore};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    BaselineArgs, Command, EvalPplArgs, ExportToyArgs, GenerateArgs, ServeArgs, ServeModelArgs,
    Settings, SketchArgs, SweepArgs,
};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: Value,
    pub text: String,
}

impl Report {
    fn new(value: &impl Serialize, text: String) -> CliResult<Self> {
        let json = serde_json::to_value(value).map_err(|e| CliError::data(e.to_string()))?;
        Ok(Self { json, text })
    }
}

pub fn dispatch(settings: &Settings, command: &Command) -> CliResult<Report> {
    match command {
        Command::Serve(a) => return cmd_serve(settings, a),
        Command::ServeModel(a) => return cmd_serve_model(settings, a),
        _ => {}
    }
    par::with_jobs(settings.jobs, || match command {
        Command::Plan(a) => cmd_plan(settings, a).and_then(|p| p.report()),
        Command::Generate(a) => {
            let providers = settings.load_providers()?;
            cmd_generate(settings, a, &providers).and_then(|s| story_report(&s))
        }
        Command::Sweep(a) => cmd_sweep(settings, a),
        Command::EvalPpl(a) => cmd_eval_ppl(settings, a),
        Command::Baseline(a) => cmd_baseline(settings, a),
        Command::ExportToy(a) => cmd_export_toy(a),
        Command::Serve(_) | Command::ServeModel(_) => unreachable!("handled above"),
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_out(settings: &Settings, name: &str, contents: &str) -> CliResult<()> {
    let Some(dir) = &settings.out else {
        return Ok(());
    };
    write_file(dir, name, contents)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn pretty(value: &impl Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))
}

fn parse_pair(s: &str) -> CliResult<(ControlCode, ControlCode)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("pair `{s}` is not of the form c1:c2")))?;
    let c1 = ControlCode::new(a.trim()).map_err(|e| CliError::usage(e.to_string()))?;
    let c2 = ControlCode::new(b.trim()).map_err(|e| CliError::usage(e.to_string()))?;
    if c1 == c2 {
        return Err(CliError::usage(format!(
            "pair `{s}` needs two different codes"
        )));
    }
    Ok((c1, c2))
}

fn check_known(codes: &[&ControlCode], providers: &Providers) -> CliResult<()> {
    let known = providers.guide().codes();
    match codes.iter().find(|c| !known.contains(c)) {
        Some(c) => Err(CliError::usage(format!(
            "the guide model has no code `{c}` (available: {})",
            join_codes(known)
        ))),
        None => Ok(()),
    }
}

fn join_codes(codes: &[ControlCode]) -> String {
    codes
        .iter()
        .map(|c| c.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Reads a sketch file and applies command-line and config overrides.
pub fn load_sketch(settings: &Settings, args: &SketchArgs) -> CliResult<SketchSet> {
    let text = read_text(&args.sketch)?;
    let mut set = SketchSet::from_json_str(&text)
        .map_err(|e| CliError::from(e).context(args.sketch.display()))?;
    if let Some(w) = args.strength.or(settings.strength) {
        set.total_strength = w;
    }
    if let Some(s) = args.sigma.or(settings.sigma) {
        set.sigma = s;
    }
    if let Some(e) = args.epsilon.or(settings.epsilon) {
        set.epsilon = e;
    }
    if let Some(m) = args
        .variance_mode
        .map(Into::into)
        .or(settings.variance_mode)
    {
        set.variance_mode = m;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutput {
    pub sketch: SketchSet,
    pub plan: LinePlan,
}

impl PlanOutput {
    /// Per-line strength of every code as CSV.
    pub fn strength_csv(&self) -> String {
        let codes: Vec<&ControlCode> = self.plan.codes().collect();
        let mut out = String::from("line");
        for c in &codes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (n, line) in self.plan.lines.iter().enumerate() {
            let _ = write!(out, "{n}");
            for c in &codes {
                let _ = write!(out, ",{}", line.strength_of(c).unwrap_or(0.0));
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        let codes: Vec<&ControlCode> = self.plan.codes().collect();
        let mut out = format!("{:>4}", "line");
        for c in &codes {
            let _ = write!(out, "  {:>10}", c.as_str());
        }
        out.push_str("  dominant\n");
        for (n, line) in self.plan.lines.iter().enumerate() {
            let _ = write!(out, "{n:>4}");
            for c in &codes {
                let _ = write!(out, "  {:>10.4}", line.strength_of(c).unwrap_or(0.0));
            }
            let _ = writeln!(out, "  {}", dominant_label(line));
        }
        out
    }

    fn report(&self) -> CliResult<Report> {
        Report::new(self, self.render())
    }
}

fn dominant_label(config: &ControlConfig) -> String {
    config
        .dominant()
        .map_or_else(|| "-".to_string(), |e| e.code.to_string())
}

pub fn cmd_plan(settings: &Settings, args: &SketchArgs) -> CliResult<PlanOutput> {
    let sketch = load_sketch(settings, args)?;
    let plan =
        compile_plan(&sketch).map_err(|e| CliError::from(e).context(args.sketch.display()))?;
    let out = PlanOutput { sketch, plan };
    write_out(settings, "plan.json", &pretty(&out)?)?;
    write_out(settings, "strengths.csv", &out.strength_csv())?;
    Ok(out)
}

/// Compiles the sketch and generates a story. On a provider failure the
/// partial story is written to `story.partial.json` in the output directory.
pub fn cmd_generate(
    settings: &Settings,
    args: &GenerateArgs,
    providers: &Providers,
) -> CliResult<Story> {
    let sketch = load_sketch(settings, &args.sketch)?;
    check_known(
        &sketch.sketches.iter().map(|s| &s.code).collect::<Vec<_>>(),
        providers,
    )?;
    let plan = compile_plan(&sketch)
        .map_err(|e| CliError::from(e).context(args.sketch.sketch.display()))?;
    let mut params = settings.pipeline_params(args.best_of.as_deref());
    if let Some(p) = &args.prompt {
        params.fallback_prompt = p.clone();
    }
    params.validate()?;
    match generate_story_with(&plan, providers, &params, |line| {
        log::info!("line {}: {}", line.n, line.text);
    }) {
        Ok(story) => {
            write_out(settings, "story.json", &pretty(&story)?)?;
            write_out(settings, "story.txt", &story.to_text())?;
            Ok(story)
        }
        Err(failure) => {
            let done = failure.partial.lines.len();
            let mut err = CliError::from(failure.error.clone());
            match &settings.out {
                Some(dir) => {
                    write_file(dir, "story.partial.json", &pretty(&failure.partial)?)?;
                    err = err.context(format!(
                        "failed after {done} lines, partial story in {}",
                        dir.join("story.partial.json").display()
                    ));
                }
                None => {
                    err = err.context(format!(
                        "failed after {done} lines; partial story:\n{}",
                        render_story(&failure.partial)
                    ));
                }
            }
            Err(err)
        }
    }
}

/// One line per story line: index, dominant code and text.
pub fn render_story(story: &Story) -> String {
    let mut out = String::new();
    for line in &story.lines {
        let mut tag = dominant_label(&line.config);
        if let Some(b) = &line.best_of {
            let _ = write!(tag, " x{}", b.chosen_multiplier);
        }
        if line.fallback_used {
            tag.push_str(" *");
        }
        let _ = writeln!(out, "{:>3}  {:<14} {}", line.n, tag, line.text);
    }
    out
}

fn story_report(story: &Story) -> CliResult<Report> {
    Report::new(story, render_story(story))
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn cmd_sweep(settings: &Settings, args: &SweepArgs) -> CliResult<Report> {
    let pairs = args
        .pairs
        .iter()
        .map(|p| parse_pair(p))
        .collect::<CliResult<Vec<_>>>()?;
    let prompts = read_lines(&args.prompts)?;
    let providers = settings.load_providers()?;
    let codes: Vec<&ControlCode> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    check_known(&codes, &providers)?;
    let classifier = settings.load_classifier()?;
    let base = args.strength.or(settings.strength).unwrap_or(1.0);
    let report: HeatmapReport = heatmap(
        &prompts,
        &pairs,
        &args.multipliers,
        base,
        &providers,
        &*classifier,
        &settings.pipeline.generation,
    )?;
    for item in report.items.iter().filter(|i| i.error.is_some()) {
        log::warn!(
            "sweep {}:{} x{} on `{}` failed: {}",
            item.c1,
            item.c2,
            item.multiplier,
            item.prompt,
            item.error.as_deref().unwrap_or_default()
        );
    }
    let csv = heatmap_csv(&report.cells);
    write_out(settings, "sweeps.json", &pretty(&report)?)?;
    write_out(settings, "heatmap.csv", &csv)?;
    write_out(settings, "heatmap.svg", &heatmap_svg(&report.cells))?;
    let mut text = csv;
    if report.failures > 0 {
        let _ = writeln!(text, "# {} sweeps failed", report.failures);
    }
    Report::new(&report, text)
}

pub fn cmd_eval_ppl(settings: &Settings, args: &EvalPplArgs) -> CliResult<Report> {
    let prompts = read_lines(&args.corpus)?;
    let providers = settings.load_providers()?;
    let codes = providers.guide().codes();
    let configs = if codes.len() >= 2 {
        equal_pair_configs(codes)
    } else {
        codes
            .iter()
            .map(|c| ControlConfig::single(c.clone(), 1.0))
            .collect::<Result<_, _>>()?
    };
    if configs.is_empty() {
        return Err(
            Error::InsufficientData("the guide model offers no control codes".into()).into(),
        );
    }
    let rows: Vec<PplRow> = ppl_grid(
        &prompts,
        &configs,
        &args.strengths,
        &providers,
        &settings.pipeline.generation,
    )?;
    let mut csv = String::from("strength,mean_ppl,n,empty\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.multiplier, r.mean_ppl, r.n, r.empty);
    }
    write_out(settings, "ppl.json", &pretty(&rows)?)?;
    write_out(settings, "ppl.csv", &csv)?;
    Report::new(&rows, csv)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineOutput {
    pub c1: String,
    pub c2: String,
    pub stories: usize,
    pub seed: u64,
    pub mean_tau_a: f64,
}

pub fn cmd_baseline(settings: &Settings, args: &BaselineArgs) -> CliResult<Report> {
    let (c1, c2) = parse_pair(&args.pair)?;
    let stories = parse_story_corpus(&read_text(&args.corpus)?);
    let classifier = settings.load_classifier()?;
    let mean = shuffled_baseline(
        &stories,
        c1.as_str(),
        c2.as_str(),
        &*classifier,
        settings.seed,
    )?;
    let out = BaselineOutput {
        c1: c1.to_string(),
        c2: c2.to_string(),
        stories: stories.len(),
        seed: settings.seed,
        mean_tau_a: mean,
    };
    write_out(settings, "baseline.json", &pretty(&out)?)?;
    let text = format!(
        "shuffled τ-a for {c1} vs {c2} over {} stories (seed {}): {mean:.4}\n",
        out.stories, out.seed
    );
    Report::new(&out, text)
}

/// Writes the toy models, lexicon, prompts, a story corpus and the three
/// sports-to-science sketches.
pub fn cmd_export_toy(args: &ExportToyArgs) -> CliResult<Report> {
    let world = toy::agnews();
    let mut files = vec![
        ("base.json", pretty(&world.base.to_file_repr(true))?),
        ("guide.json", pretty(&world.guide.to_file_repr())?),
        ("lexicon.json", pretty(&world.lexicons)?),
        ("prompts.txt", toy::prompts().join("\n") + "\n"),
    ];
    let stories = toy::random_stories(200, 5, 11)
        .iter()
        .map(|s| s.join("\n"))
        .collect::<Vec<_>>()
        .join("\n\n");
    files.push(("stories.txt", stories + "\n"));
    for (i, start) in [4, 5, 6].into_iter().enumerate() {
        let name = ["sketch1.json", "sketch2.json", "sketch3.json"][i];
        files.push((name, pretty(&toy::sports_science_sketch(start, 2.0))?));
    }
    for (name, body) in &files {
        write_file(&args.dir, name, body)?;
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    let text = names
        .iter()
        .map(|n| format!("{}\n", args.dir.join(n).display()))
        .collect();
    Report::new(&json!({ "dir": args.dir, "files": names }), text)
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Runtime::new()
        .map_err(|e| CliError::usage(format!("cannot start runtime: {e}")))
}

pub fn cmd_serve(settings: &Settings, args: &ServeArgs) -> CliResult<Report> {
    let providers = settings.load_providers()?;
    let store = match &args.sessions {
        Some(dir) => SessionStore::persistent(dir)
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?,
        None => SessionStore::in_memory(),
    };
    let params = settings.pipeline_params(None);
    params.validate()?;
    let app = router(
        AppState::new(providers, store, params),
        args.cors_origin.as_deref(),
    );
    runtime()?
        .block_on(plugblend_server::serve(args.addr, app))
        .map_err(|e| CliError::usage(format!("{}: {e}", args.addr)))?;
    Report::new(&json!({}), String::new())
}

pub fn cmd_serve_model(settings: &Settings, args: &ServeModelArgs) -> CliResult<Report> {
    let backend = ModelBackend {
        base: settings.load_base()?,
        guide: Some(settings.load_guide()?),
        classifier: Some(settings.load_classifier()?),
    };
    runtime()?
        .block_on(plugblend_server::serve(args.addr, model_router(backend)))
        .map_err(|e| CliError::usage(format!("{}: {e}", args.addr)))?;
    Report::new(&json!({}), String::new())
}
