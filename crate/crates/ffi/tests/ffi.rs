use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use ndarray::Array2;

use spem_core::embed::{build_memory_bank, fit_embedder, EmbedderKind, ReActConfig};
use spem_core::flow::{FlowArch, FlowModel};
use spem_core::spem::{spem_score as core_score, SpemConfig};
use spem_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model: FlowModel,
    model_path: CString,
    bank_path: CString,
    embedder_path: CString,
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let arch = FlowArch {
        layers: 2,
        hidden: 8,
        ..FlowArch::default()
    };
    let model = FlowModel::random(3, &arch, 0.3, 4).unwrap();
    let data = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let e = fit_embedder(&data, EmbedderKind::Identity, 3, 0).unwrap();
    let bank = build_memory_bank(&data, &e, &ReActConfig::default()).unwrap();
    let mp = dir.path().join("model.bin");
    let bp = dir.path().join("bank.bin");
    let ep = dir.path().join("embedder.bin");
    model.save(&mp).unwrap();
    bank.save(&bp).unwrap();
    e.save(&ep).unwrap();
    Fixture {
        model,
        model_path: cpath(&mp),
        bank_path: cpath(&bp),
        embedder_path: cpath(&ep),
        _dir: dir,
    }
}

fn last_error() -> String {
    let p = spem_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn flow_round_trip_through_handles() {
    let fx = fixture();
    unsafe {
        let mut flow = ptr::null_mut();
        assert_eq!(spem_flow_load(fx.model_path.as_ptr(), &mut flow), SpemStatus::Ok);
        assert_eq!(spem_flow_dim(flow), 3);
        let x = [0.2, -0.4, 0.9];
        let mut ll = 0.0;
        assert_eq!(spem_flow_log_likelihood(flow, x.as_ptr(), 3, &mut ll), SpemStatus::Ok);
        assert_eq!(ll, fx.model.log_likelihood(&x).unwrap());
        let mut z = [0.0; 3];
        let mut ld = 0.0;
        assert_eq!(
            spem_flow_forward(flow, x.as_ptr(), 3, z.as_mut_ptr(), &mut ld),
            SpemStatus::Ok
        );
        let (z_ref, ld_ref) = fx.model.forward(&x).unwrap();
        assert_eq!(z.to_vec(), z_ref);
        assert_eq!(ld, ld_ref);

        assert_eq!(
            spem_flow_log_likelihood(flow, x.as_ptr(), 2, &mut ll),
            SpemStatus::InvalidArgument
        );
        assert!(last_error().contains("dimension"));
        spem_flow_free(flow);
        spem_flow_free(ptr::null_mut());
    }
}

#[test]
fn spem_score_matches_core() {
    let fx = fixture();
    unsafe {
        let mut flow = ptr::null_mut();
        let mut bank = ptr::null_mut();
        assert_eq!(spem_flow_load(fx.model_path.as_ptr(), &mut flow), SpemStatus::Ok);
        assert_eq!(
            spem_bank_load(fx.bank_path.as_ptr(), fx.embedder_path.as_ptr(), &mut bank),
            SpemStatus::Ok
        );
        let x = [0.5, 0.1, -0.3];
        let (mut s, mut l, mut sg) = (0.0, 0.0, 0.0);
        assert_eq!(
            spem_score(flow, bank, x.as_ptr(), 3, 0.4, 0.1, 9, 17, &mut s, &mut l, &mut sg),
            SpemStatus::Ok
        );
        let e = spem_core::embed::Embedder::load(Path::new(fx.embedder_path.to_str().unwrap())).unwrap();
        let b = spem_core::embed::MemoryBank::load(Path::new(fx.bank_path.to_str().unwrap())).unwrap();
        let cfg = SpemConfig {
            alpha: 0.4,
            alpha_noise: 0.1,
            seed: 9,
        };
        let r = core_score(&fx.model, &b, &e, &cfg, &x, 17).unwrap();
        assert_eq!(s, r.value);
        assert_eq!(Some(l), r.lambda);
        assert_eq!(Some(sg), r.sigma);

        let mut lam = 0.0;
        assert_eq!(spem_bank_lambda(bank, x.as_ptr(), 3, &mut lam), SpemStatus::Ok);
        assert_eq!(lam, l);

        // optional outputs may be null
        let mut s2 = 0.0;
        assert_eq!(
            spem_score(
                flow,
                bank,
                x.as_ptr(),
                3,
                0.4,
                0.1,
                9,
                17,
                &mut s2,
                ptr::null_mut(),
                ptr::null_mut()
            ),
            SpemStatus::Ok
        );
        assert_eq!(s2, s);
        spem_bank_free(bank);
        spem_flow_free(flow);
    }
}

#[test]
fn errors_are_reported() {
    let fx = fixture();
    unsafe {
        let missing = CString::new("/nonexistent/model.bin").unwrap();
        let mut flow = ptr::null_mut();
        assert_eq!(spem_flow_load(missing.as_ptr(), &mut flow), SpemStatus::Io);
        assert!(flow.is_null());
        assert!(last_error().contains("/nonexistent/model.bin"));

        // a bank file is not a model
        assert_eq!(spem_flow_load(fx.bank_path.as_ptr(), &mut flow), SpemStatus::Format);
        assert_eq!(spem_flow_load(ptr::null(), &mut flow), SpemStatus::NullPointer);
        assert_eq!(
            spem_flow_load(fx.model_path.as_ptr(), ptr::null_mut()),
            SpemStatus::NullPointer
        );

        let mut bank = ptr::null_mut();
        assert_eq!(
            spem_bank_load(fx.bank_path.as_ptr(), fx.model_path.as_ptr(), &mut bank),
            SpemStatus::Format
        );
        let mut out = 0.0;
        let x = [0.0; 3];
        assert_eq!(
            spem_score(
                ptr::null(),
                ptr::null(),
                x.as_ptr(),
                3,
                0.4,
                0.1,
                0,
                0,
                &mut out,
                ptr::null_mut(),
                ptr::null_mut()
            ),
            SpemStatus::NullPointer
        );
    }
}

#[test]
fn auroc_through_abi() {
    let id = [0.0, 2.0];
    let ood = [1.0, 3.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(spem_auroc(id.as_ptr(), 2, ood.as_ptr(), 2, &mut out), SpemStatus::Ok);
        assert_eq!(out, 0.75);
        assert_eq!(
            spem_auroc(id.as_ptr(), 0, ood.as_ptr(), 2, &mut out),
            SpemStatus::InvalidArgument
        );
        let bad = [f64::NAN];
        assert_eq!(
            spem_auroc(bad.as_ptr(), 1, ood.as_ptr(), 2, &mut out),
            SpemStatus::Numeric
        );
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(spem_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/spem.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for f in [
        "spem_flow_load",
        "spem_flow_free",
        "spem_flow_dim",
        "spem_flow_log_likelihood",
        "spem_flow_forward",
        "spem_bank_load",
        "spem_bank_free",
        "spem_bank_lambda",
        "spem_score",
        "spem_auroc",
        "spem_version",
        "spem_last_error",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
        .expect("C compiler");
    assert!(status.success());
}
