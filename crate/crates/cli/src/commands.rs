use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use synoe_core::audit::audit_manifest;
use synoe_core::augment::{run_pipeline, PipelineConfig, PipelineError, Services};
use synoe_core::evidence::{load_evidence, save_json, EvidenceFile};
use synoe_core::manifest_io::{load_manifest, load_manifest_with, save_manifest, LoadOptions, ManifestError};
use synoe_core::metrics::{evaluate, load_dump, render_table, EvalOptions, MetricsError};
use synoe_core::model::DatasetManifest;
use synoe_core::policy::{select_variant, CountDistribution};
use synoe_core::prompts::{CatalogError, PromptCatalog};
use synoe_core::review::{ReviewError, ReviewStore};
use synoe_core::svc::http::{HttpDetector, HttpInpainter, RetryPolicy};
use synoe_core::svc::mock::{MockDetector, MockInpainter, MockRates};
use synoe_core::svc::{Detector, Inpainter, Thresholds};
use synoe_core::synthetic::{write_dataset, SyntheticSpec};
use synoe_server::{mock_services, review_api, serve_blocking};

use crate::config::{env_nonempty, layered, Echo, FileConfig, ENV_DETECT_URL, ENV_INPAINT_URL};
use crate::{
    parse_variant, AuditArgs, CliError, EvalArgs, GenerateArgs, MockServicesArgs, ReviewArgs, SynthArgs, ValidateArgs,
};

const DEFAULT_PROPORTION: f64 = 1.0;
const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const DEFAULT_MOCK_RATE: f64 = 0.1;

fn manifest_err(e: ManifestError) -> CliError {
    if e.is_validation() {
        CliError::Validation(e.to_string())
    } else {
        CliError::Runtime(e.to_string())
    }
}

fn pipeline_err(e: PipelineError) -> CliError {
    match e {
        PipelineError::Manifest(m) => manifest_err(m),
        PipelineError::Policy(_) => CliError::Validation(e.to_string()),
        PipelineError::Io { .. } | PipelineError::Pool(_) => CliError::Runtime(e.to_string()),
    }
}

fn review_err(e: ReviewError) -> CliError {
    match e {
        ReviewError::Io { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    match e {
        MetricsError::Load(m) => manifest_err(m),
        other => CliError::Validation(other.to_string()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn socket(host: &str, port: u16) -> Result<SocketAddr, CliError> {
    format!("{host}:{port}").parse().map_err(|e| CliError::Validation(format!("bad address {host}:{port}: {e}")))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf()
}

fn mock_rates(file: &FileConfig) -> MockRates {
    MockRates {
        id_variant: file.mock_id_variant_rate.unwrap_or(DEFAULT_MOCK_RATE),
        empty: file.mock_empty_rate.unwrap_or(DEFAULT_MOCK_RATE),
    }
}

fn mock_detector(fixtures: Option<&Path>) -> Result<MockDetector, CliError> {
    match fixtures {
        Some(path) => {
            let fixtures = MockDetector::load_fixtures(path).map_err(CliError::Validation)?;
            Ok(MockDetector::scripted(fixtures).with_fallback())
        }
        None => Ok(MockDetector::analyzing()),
    }
}

pub fn generate(args: GenerateArgs, file: &FileConfig) -> Result<(), CliError> {
    let mut echo = Echo::default();
    let drop_classes = layered(args.drop_classes, None, file.drop_classes.clone()).unwrap_or_default();
    let manifest = load_manifest_with(&args.input, &LoadOptions { drop_classes: drop_classes.clone() })
        .map_err(manifest_err)?;

    let variant = match (args.variant, &file.variant) {
        (Some(v), _) => v,
        (None, Some(s)) => parse_variant(s).map_err(|e| CliError::Validation(format!("config `variant`: {e}")))?,
        (None, None) => return Err(CliError::Validation("a variant is required (--variant or config `variant`)".into())),
    };
    let proportion = layered(args.proportion, None, file.proportion).unwrap_or(DEFAULT_PROPORTION);
    let seed = layered(args.seed, None, file.seed).unwrap_or(0);
    let workers = layered(args.workers, None, file.workers);
    if workers == Some(0) {
        return Err(CliError::Validation("--workers must be at least 1".into()));
    }
    let defaults = Thresholds::default();
    let thresholds = Thresholds {
        box_threshold: layered(args.box_threshold, None, file.box_threshold).unwrap_or(defaults.box_threshold),
        text_threshold: layered(args.text_threshold, None, file.text_threshold).unwrap_or(defaults.text_threshold),
    };

    let mut policy = select_variant(variant).expect("parser rejects Original").with_proportion(proportion);
    if let Some(w) = &file.count_weights {
        policy.per_image_count_dist = CountDistribution(w.iter().enumerate().map(|(i, w)| (i as u32 + 1, *w)).collect());
    }
    if let Some(classes) = &file.replaceable_classes {
        policy.replaceable_classes = classes.clone();
    }
    if let Some(side) = file.road_crop_side {
        policy.road_crop_side = side;
    }

    let prompts = layered(args.prompts, None, file.prompts.clone());
    let catalog = match &prompts {
        Some(p) => PromptCatalog::from_file(p, policy.use_lf_extended_prompts, &manifest.registry),
        None => PromptCatalog::bundled(policy.use_lf_extended_prompts, &manifest.registry),
    }
    .map_err(|e| match e {
        CatalogError::Io { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Validation(other.to_string()),
    })?;

    echo.set("input", args.input.display().to_string());
    echo.set("variant", variant.as_str());
    echo.set("proportion", proportion);
    echo.set("seed", seed);
    echo.set("box_threshold", thresholds.box_threshold);
    echo.set("text_threshold", thresholds.text_threshold);
    echo.set("prompts", prompts.as_ref().map(|p| p.display().to_string()));
    echo.set("count_distribution", &policy.per_image_count_dist);
    echo.set("replaceable_classes", &policy.replaceable_classes);
    echo.set("road_crop_side", policy.road_crop_side);
    echo.set("drop_classes", &drop_classes);

    let mock = args.mock || file.mock == Some(true);
    let (inpainter, detector): (Box<dyn Inpainter>, Box<dyn Detector>) = if mock {
        let rates = mock_rates(file);
        let fixtures = layered(args.detect_fixtures, None, file.detect_fixtures.clone());
        echo.set("services", "mock");
        echo.set("mock_rates", rates);
        echo.set("detect_fixtures", fixtures.as_ref().map(|p| p.display().to_string()));
        (Box::new(MockInpainter::with_rates(seed, rates)), Box::new(mock_detector(fixtures.as_deref())?))
    } else {
        let missing = |what: &str, env: &str| {
            CliError::Validation(format!("no {what} service URL: pass --{what}-url, set {env}, or use --mock"))
        };
        let inpaint_url = layered(args.inpaint_url, env_nonempty(ENV_INPAINT_URL), file.inpaint_url.clone())
            .ok_or_else(|| missing("inpaint", ENV_INPAINT_URL))?;
        let detect_url = layered(args.detect_url, env_nonempty(ENV_DETECT_URL), file.detect_url.clone())
            .ok_or_else(|| missing("detect", ENV_DETECT_URL))?;
        let retry = RetryPolicy { max_retries: file.max_retries.unwrap_or(RetryPolicy::default().max_retries), ..Default::default() };
        let in_flight = file.max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT).max(1);
        echo.set("services", "http");
        echo.set("inpaint_url", &inpaint_url);
        echo.set("detect_url", &detect_url);
        echo.set("max_in_flight", in_flight);
        (
            Box::new(HttpInpainter::with_options(&inpaint_url, retry, in_flight)),
            Box::new(HttpDetector::with_options(&detect_url, retry, in_flight)),
        )
    };

    let cfg = PipelineConfig {
        policy,
        seed,
        thresholds,
        workers,
        input_dir: parent_dir(&args.input),
        out_dir: args.out.clone(),
        config_echo: echo.0,
    };
    let services = Services { inpainter: inpainter.as_ref(), detector: detector.as_ref() };
    let out = run_pipeline(&manifest, &cfg, &catalog, services).map_err(pipeline_err)?;
    tracing::info!(out = %args.out.display(), augmented = out.report.images_augmented, "generation finished");
    print_json(&out.report);
    Ok(())
}

pub fn audit(args: AuditArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest).map_err(manifest_err)?;
    let evidence = load_evidence(&args.evidence).map_err(manifest_err)?;
    let (audited, report) = audit_manifest(&manifest, &evidence);
    save_manifest(&audited, &args.out).map_err(manifest_err)?;
    save_json(&report, &args.report).map_err(manifest_err)?;
    tracing::info!(ambiguous = report.ambiguous, mislabeled_as_id = report.mislabeled_as_id, "audit finished");
    print_json(&report);
    Ok(())
}

fn review_store(args: &ReviewArgs) -> Result<ReviewStore, CliError> {
    let manifest: DatasetManifest = load_manifest(&args.manifest).map_err(manifest_err)?;
    let base_dir = parent_dir(&args.manifest);
    let evidence_path = args.evidence.clone().or_else(|| {
        let sibling = base_dir.join("evidence.json");
        sibling.exists().then_some(sibling)
    });
    let evidence = match &evidence_path {
        Some(p) => load_evidence(p).map_err(manifest_err)?,
        None => EvidenceFile::default(),
    };
    ReviewStore::open(manifest, evidence, Some(args.journal.clone()), base_dir).map_err(review_err)
}

pub fn review(args: ReviewArgs) -> Result<(), CliError> {
    let addr = socket(&args.host, args.port)?;
    let store = review_store(&args)?;
    tracing::info!(
        flagged = store.list_flagged(0, 1).total,
        replayed = store.history().len(),
        journal = %args.journal.display(),
        "review store ready"
    );
    let state = review_api::ReviewState { store: Arc::new(RwLock::new(store)), export_path: args.export.clone() };
    serve_blocking(review_api::router(state), addr).map_err(|e| CliError::Runtime(format!("review server: {e}")))
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let gt = load_manifest(&args.gt).map_err(manifest_err)?;
    let dump = load_dump(&args.dets).map_err(metrics_err)?;
    let report = evaluate(&gt, &dump, EvalOptions { class_agnostic: args.class_agnostic }).map_err(metrics_err)?;
    print!("{}", render_table(&report));
    if let Some(out) = &args.out {
        save_json(&report, out).map_err(manifest_err)?;
    }
    Ok(())
}

pub fn mock_services(args: MockServicesArgs, file: &FileConfig) -> Result<(), CliError> {
    let addr = socket(&args.host, args.port)?;
    let seed = layered(args.seed, None, file.seed).unwrap_or(0);
    let fixtures = layered(args.detect_fixtures, None, file.detect_fixtures.clone());
    let inpainter = Arc::new(MockInpainter::with_rates(seed, mock_rates(file)));
    let detector = Arc::new(mock_detector(fixtures.as_deref())?);
    serve_blocking(mock_services::router(inpainter, detector), addr)
        .map_err(|e| CliError::Runtime(format!("mock services: {e}")))
}

pub fn validate(args: ValidateArgs, file: &FileConfig) -> Result<(), CliError> {
    let drop_classes = layered(args.drop_classes, None, file.drop_classes.clone()).unwrap_or_default();
    let m = load_manifest_with(&args.manifest, &LoadOptions { drop_classes }).map_err(manifest_err)?;
    if let Err(v) = m.validate() {
        return Err(manifest_err(ManifestError::Invariant(v)));
    }
    print_json(&serde_json::json!({
        "valid": true,
        "images": m.images.len(),
        "annotations": m.annotations.len(),
        "categories": m.registry.n(),
    }));
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    if args.width < 64 || args.height < 64 {
        return Err(CliError::Validation("synthetic images must be at least 64x64".into()));
    }
    let spec = SyntheticSpec {
        images: args.images,
        width: args.width,
        height: args.height,
        seed: args.seed,
        road_masks: !args.no_road_masks,
        ..Default::default()
    };
    let path = write_dataset(&args.out, &spec).map_err(manifest_err)?;
    println!("{}", path.display());
    Ok(())
}
