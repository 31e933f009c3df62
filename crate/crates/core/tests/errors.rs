//! Every error variant reached through the public API.

use nalgebra::{DMatrix, DVector};
use std::io::Write;
use stmoe::dist::SkewTParams;
use stmoe::ecm::{multi_start_fit, weighted_least_squares, FitConfig};
use stmoe::estep::{latent_moments, posterior_tau};
use stmoe::io::{read_dataset, ModelFile, Schema};
use stmoe::model::*;
use stmoe::mstep::brent_root;
use stmoe::predict::predict;
use stmoe::select::select_k;
use stmoe::sim::reference_truth;
use stmoe::specfun::xi;
use stmoe::Error;

fn scalar(t: &[f64], y: &[f64]) -> Dataset {
    Dataset::from_scalar_covariate(t, y).unwrap()
}

#[test]
fn domain() {
    assert!(matches!(SkewTParams::new(0.0, -1.0, 0.0, 3.0), Err(Error::Domain(_))));
    assert!(matches!(SkewTParams::new(0.0, 1.0, 0.0, 0.0), Err(Error::Domain(_))));
    let cfg = FitConfig { tol: 0.0, ..Default::default() };
    assert!(matches!(cfg.validate(), Err(Error::Domain(_))));
}

#[test]
fn dimension() {
    let gate = GatingParams::zeros(2, 3);
    assert!(matches!(gating_probs(&[1.0, 0.0], &gate), Err(Error::Dimension(_))));
    let data = scalar(&[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0]);
    assert!(matches!(weighted_least_squares(&data, &[1.0]), Err(Error::Dimension(_))));
}

#[test]
fn invalid_data() {
    let bad = Dataset::new(DVector::from_vec(vec![1.0, f64::NAN]), DMatrix::from_element(2, 1, 1.0), DMatrix::from_element(2, 1, 1.0));
    assert!(matches!(bad, Err(Error::InvalidData(_))));
    assert!(matches!(Dataset::from_scalar_covariate(&[0.0, 1.0], &[1.0]), Err(Error::InvalidData(_) | Error::Dimension(_))));
}

#[test]
fn zero_density() {
    let psi = reference_truth(Family::Stmoe);
    let data = scalar(&[0.1], &[1e160]);
    assert!(matches!(posterior_tau(&data, &psi), Err(Error::ZeroDensity { row: 0 })));
}

#[test]
fn invalid_bracket() {
    assert!(matches!(brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12), Err(Error::InvalidBracket { .. })));
}

#[test]
fn undefined_moment() {
    assert!(matches!(xi(1.0), Err(Error::UndefinedMoment(_))));
    let mut psi = reference_truth(Family::Stmoe);
    psi.experts[0].nu = 0.9;
    assert!(matches!(predict(&[1.0, 0.5], &[1.0, 0.5], &psi), Err(Error::UndefinedMoment(_))));
}

#[test]
fn wrong_family() {
    let psi = reference_truth(Family::Nmoe);
    let data = scalar(&[0.1, 0.2], &[0.0, 0.1]);
    assert!(matches!(latent_moments(&data, &psi), Err(Error::WrongFamily(_))));
}

#[test]
fn fit_failed() {
    let data = scalar(&[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0]);
    assert!(matches!(weighted_least_squares(&data, &[0.0; 3]), Err(Error::FitFailed(_))));
    let cfg = FitConfig { n_starts: 1, ..Default::default() };
    assert!(matches!(select_k(&data, Family::Nmoe, 3..=3, &cfg), Err(Error::FitFailed(_))));
    assert!(matches!(multi_start_fit(&data, 3, Family::Nmoe, &cfg), Err(Error::FitFailed(_))));
    assert!(matches!(weighted_least_squares(&data, &[1.0, -1.0, 1.0]), Err(Error::Domain(_))));
}

fn csv(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn parse_reports_the_data_row() {
    let f = csv("x,y\n1,2\n3,abc\n");
    match read_dataset(f.path(), &Schema::new("y", vec!["x".into()])) {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "y")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn csv_structure() {
    let f = csv("x,y\n1,2\n3,4,5\n");
    assert!(matches!(read_dataset(f.path(), &Schema::new("y", vec!["x".into()])), Err(Error::Csv(_))));
}

#[test]
fn io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert!(matches!(read_dataset(&missing, &Schema::new("y", vec!["x".into()])), Err(Error::Io { .. })));
    assert!(matches!(ModelFile::load(&missing), Err(Error::Io { .. })));
}

#[test]
fn model_file() {
    assert!(matches!(ModelFile::from_json("{"), Err(Error::ModelFile(_))));
    let mut mf = ModelFile::from_params(&reference_truth(Family::Stmoe));
    mf.format_version = 99;
    assert!(matches!(mf.to_params(), Err(Error::ModelFile(_))));
    let mut mf = ModelFile::from_params(&reference_truth(Family::Stmoe));
    mf.experts[1].nu = None;
    assert!(matches!(mf.to_params(), Err(Error::ModelFile(_))));
    let mut mf = ModelFile::from_params(&reference_truth(Family::Stmoe));
    mf.gating.clear();
    assert!(matches!(mf.to_params(), Err(Error::ModelFile(_))));
}
