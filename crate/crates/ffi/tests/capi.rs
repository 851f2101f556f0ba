use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::Arc;

use autohead::classifiers::Matrix;
use autohead::cnn::{architecture, build_network, train, truncate_head, ExampleSet, TrainConfig, TrainedNetwork};
use autohead::data::{generate_synthetic_problem, synthetic_suite, ProblemDataset};
use autohead::fusion::{fuse_predictions, normalize_auc_weights, PredictionMatrix, ValidationScores};
use autohead::headsearch::{assemble_auto_classifier, candidate_space, fit_candidate, AutoClassifierModel};
use autohead::metrics::roc_auc;
use autohead_ffi::*;

fn dataset() -> ProblemDataset {
    let mut spec = synthetic_suite(0.6, 0.1, 4).remove(0);
    spec.n_defect = 12;
    spec.n_clean = 28;
    generate_synthetic_problem(&spec).unwrap()
}

fn trained(ds: &ProblemDataset, arch: &str, seed: u64) -> TrainedNetwork {
    let inputs: Vec<_> = ds.images.iter().map(|i| &i.pixels).collect();
    let labels: Vec<usize> = ds.images.iter().map(|i| i.class_index()).collect();
    let set = ExampleSet::new(inputs, labels).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        seed,
        ..TrainConfig::default()
    };
    train(build_network(&architecture(arch).unwrap(), seed).unwrap(), &set, &set, &cfg).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    ds: ProblemDataset,
    nets: Vec<(TrainedNetwork, PathBuf)>,
    auto: (AutoClassifierModel, PathBuf),
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset();
    let nets: Vec<(TrainedNetwork, PathBuf)> = ["desk-vgg-a", "desk-vgg-c"]
        .iter()
        .enumerate()
        .map(|(i, arch)| {
            let net = trained(&ds, arch, i as u64 + 1);
            let path = dir.path().join(format!("{arch}.acnn"));
            net.save(&path).unwrap();
            (net, path)
        })
        .collect();
    let ex = truncate_head(&nets[1].0);
    let rows: Vec<Vec<f64>> = ds.images.iter().map(|i| ex.extract(&i.pixels).unwrap()).collect();
    let y: Vec<bool> = ds.images.iter().map(|i| i.defect).collect();
    let spec = candidate_space(0).nth(3).unwrap();
    let head = fit_candidate(&spec, &Matrix::from_rows(&rows).unwrap(), &y, 0).unwrap();
    let model = assemble_auto_classifier(ex, Arc::new(head), spec, 1.0, vec![]).unwrap();
    let path = dir.path().join("auto.model");
    model.save(&path).unwrap();
    Fixture {
        _dir: dir,
        ds,
        nets,
        auto: (model, path),
    }
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ah_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_and_positive_class() {
    let v = unsafe { CStr::from_ptr(ah_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert_eq!(ah_positive_class(), 1);
}

#[test]
fn roc_auc_matches_library() {
    let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
    let labels = [0u8, 0, 1, 1, 1];
    let mut out = 0.0;
    assert_eq!(unsafe { ah_roc_auc(scores.as_ptr(), labels.as_ptr(), 5, &mut out) }, AhStatus::Ok);
    let truth: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    assert_eq!(out, roc_auc(&scores, &truth).unwrap());
    assert!(ah_last_error_message().is_null());

    let one = [1u8; 5];
    assert_eq!(unsafe { ah_roc_auc(scores.as_ptr(), one.as_ptr(), 5, &mut out) }, AhStatus::AucUndefined);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { ah_roc_auc(ptr::null(), one.as_ptr(), 5, &mut out) }, AhStatus::NullPointer);
}

#[test]
fn networks_fusion_and_composite() {
    let fx = fixture();
    let mut handles = Vec::new();
    for (net, path) in &fx.nets {
        let mut h: *mut AhNetwork = ptr::null_mut();
        assert_eq!(unsafe { ah_network_load(c_path(path).as_ptr(), &mut h) }, AhStatus::Ok);
        assert_eq!(unsafe { ah_network_input_len(h) }, 32 * 32);
        assert_eq!(unsafe { ah_network_class_count(h) }, 2);
        let mut auc = 0.0;
        assert_eq!(unsafe { ah_network_validation_auc(h, &mut auc) }, AhStatus::Ok);
        assert_eq!(auc, net.validation_auc);
        for img in fx.ds.images.iter().take(5) {
            let px = img.pixels.data();
            let mut probs = [0.0; 2];
            assert_eq!(unsafe { ah_network_predict(h, px.as_ptr(), px.len(), probs.as_mut_ptr(), 2) }, AhStatus::Ok);
            assert_eq!(probs.to_vec(), net.predict(&img.pixels).unwrap());
            let mut small = [0.0; 1];
            assert_eq!(
                unsafe { ah_network_predict(h, px.as_ptr(), px.len(), small.as_mut_ptr(), 1) },
                AhStatus::BufferTooSmall
            );
            assert_eq!(unsafe { ah_network_predict(h, px.as_ptr(), 10, probs.as_mut_ptr(), 2) }, AhStatus::Shape);
        }
        handles.push(h as *const AhNetwork);
    }

    let mut fusion: *mut AhFusion = ptr::null_mut();
    assert_eq!(unsafe { ah_fusion_new(handles.as_ptr(), handles.len(), &mut fusion) }, AhStatus::Ok);
    let nets: Vec<TrainedNetwork> = fx.nets.iter().map(|(n, _)| n.clone()).collect();
    let w = normalize_auc_weights(&ValidationScores::from_networks(&nets).unwrap()).unwrap();
    for (i, expected) in w.weights.iter().enumerate() {
        let mut got = 0.0;
        assert_eq!(unsafe { ah_fusion_weight(fusion, i, &mut got) }, AhStatus::Ok);
        assert_eq!(got, *expected);
    }
    let mut got = 0.0;
    assert_eq!(unsafe { ah_fusion_weight(fusion, 2, &mut got) }, AhStatus::InvalidArgument);
    for img in fx.ds.images.iter().take(5) {
        let px = img.pixels.data();
        let (mut winner, mut scores) = (9usize, [0.0; 2]);
        assert_eq!(
            unsafe { ah_fusion_predict(fusion, px.as_ptr(), px.len(), &mut winner, scores.as_mut_ptr(), 2) },
            AhStatus::Ok
        );
        let cols: Vec<Vec<f64>> = nets.iter().map(|n| n.predict(&img.pixels).unwrap()).collect();
        let (ew, ef) = fuse_predictions(&PredictionMatrix::from_columns(&cols).unwrap(), &w).unwrap();
        assert_eq!((winner, scores.to_vec()), (ew, ef));
    }
    unsafe { ah_fusion_free(fusion) };
    for h in handles {
        unsafe { ah_network_free(h as *mut AhNetwork) };
    }

    let (model, path) = &fx.auto;
    let mut auto: *mut AhAutoClassifier = ptr::null_mut();
    assert_eq!(unsafe { ah_auto_classifier_load(c_path(path).as_ptr(), &mut auto) }, AhStatus::Ok);
    assert_eq!(unsafe { ah_auto_classifier_feature_dim(auto) }, model.extractor().dim);
    assert_eq!(unsafe { ah_auto_classifier_input_len(auto) }, 32 * 32);
    for img in &fx.ds.images {
        let px = img.pixels.data();
        let mut p = -1.0;
        assert_eq!(unsafe { ah_auto_classifier_predict_proba(auto, px.as_ptr(), px.len(), &mut p) }, AhStatus::Ok);
        assert_eq!(p.to_bits(), model.predict_proba(&img.pixels).unwrap().to_bits());
        let f = model.extractor().extract(&img.pixels).unwrap();
        let mut q = -1.0;
        assert_eq!(unsafe { ah_auto_classifier_head_proba(auto, f.as_ptr(), f.len(), &mut q) }, AhStatus::Ok);
        assert_eq!(p.to_bits(), q.to_bits());
    }
    unsafe { ah_auto_classifier_free(auto) };
}

#[test]
fn load_failures_report_status_and_message() {
    let fx = fixture();
    let mut h: *mut AhNetwork = std::ptr::dangling_mut::<AhNetwork>();
    let missing = CString::new("/nonexistent/model.acnn").unwrap();
    assert_eq!(unsafe { ah_network_load(missing.as_ptr(), &mut h) }, AhStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"));
    // an auto-classifier file is not a plain network
    assert_eq!(unsafe { ah_network_load(c_path(&fx.auto.1).as_ptr(), &mut h) }, AhStatus::Format);
    assert_eq!(unsafe { ah_network_load(ptr::null(), &mut h) }, AhStatus::NullPointer);
    let mut a: *mut AhAutoClassifier = ptr::null_mut();
    assert_eq!(unsafe { ah_auto_classifier_load(c_path(&fx.nets[0].1).as_ptr(), &mut a) }, AhStatus::Format);
    let mut f: *mut AhFusion = ptr::null_mut();
    assert_eq!(unsafe { ah_fusion_new(ptr::null(), 0, &mut f) }, AhStatus::InvalidArgument);
    // null handles are tolerated by the accessors and destructors
    assert_eq!(unsafe { ah_network_input_len(ptr::null()) }, 0);
    unsafe {
        ah_network_free(ptr::null_mut());
        ah_fusion_free(ptr::null_mut());
        ah_auto_classifier_free(ptr::null_mut());
    }
}

fn header() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/autohead.h")).unwrap()
}

#[test]
fn header_declares_every_export() {
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let h = header();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct AhNetwork AhNetwork;", "typedef struct AhFusion AhFusion;", "AH_STATUS_BUFFER_TOO_SMALL = 11"] {
        assert!(h.contains(ty), "{ty}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(
        &main,
        "#include \"autohead.h\"\n\
         int main(void) {\n\
           AhNetwork *n = NULL;\n\
           double p[2];\n\
           AhStatus s = ah_network_load(\"x\", &n);\n\
           if (s != AH_STATUS_OK) return (int)s;\n\
           s = ah_network_predict(n, NULL, 0, p, 2);\n\
           ah_network_free(n);\n\
           return s == AH_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&main)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "clang", "gcc"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
