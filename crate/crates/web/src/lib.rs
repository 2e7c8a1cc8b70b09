//! WebAssembly bindings for the demo page in `www/`. Every export returns a
//! JSON string so the page needs no generated type glue beyond the functions.

use kedmd::config::ExperimentConfig;
use kedmd::systems::{generate_dataset, modulo_true_eigenvalues, SystemSpec};
use kedmd::trainer::{self, subsample_centers};
use kedmd::{fit_sk, Error, PredictMethod, PrimitiveKernel, SnapshotSet, WeightedKernelSum};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Initial conditions kept small so every call stays interactive.
const MODULO_IC: usize = 20;
const DUFFING_IC: usize = 40;
const CENTERS: usize = 40;

fn preset(name: &str) -> ExperimentConfig {
    ExperimentConfig::preset(name).expect("embedded presets parse")
}

fn snapshots(cfg: &ExperimentConfig, n_ic: usize, stride: usize) -> Result<SnapshotSet, Error> {
    generate_dataset(&cfg.system, n_ic, cfg.data.steps, cfg.data.seed)?.to_snapshots(stride)
}

fn pairs(values: &[kedmd::c64]) -> Vec<[f64; 2]> {
    values.iter().map(|l| [l.re, l.im]).collect()
}

fn to_js(r: Result<Value, Error>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Spectrum of the circle rotation under an embedded RBF kernel of width
/// `sigma`, fitted without regularization, next to the true eigenvalues.
pub fn modulo_spectrum_value(sigma: f64, n_centers: usize) -> Result<Value, Error> {
    let cfg = preset("modulo");
    let omega = match cfg.system {
        SystemSpec::Modulo(m) => m.omega,
        _ => unreachable!("modulo preset"),
    };
    let data = snapshots(&cfg, MODULO_IC, 1)?;
    let kernel = WeightedKernelSum::single(PrimitiveKernel::from_params(kedmd::KernelKind::EmbeddedRbf, &[sigma])?);
    let centers = subsample_centers(&data, n_centers.clamp(1, data.len()), cfg.train.seed)?;
    let model = fit_sk(&kernel, &centers, 0.0)?;
    let residuals = model.residuals_lenient(&data)?;
    Ok(json!({
        "eigenvalues": pairs(model.eigenvalues()),
        "residuals": residuals,
        "truth": pairs(&modulo_true_eigenvalues(omega, 20)),
    }))
}

/// Duffing trajectory from `(x1, x2)` next to the prediction of an RBF model.
pub fn duffing_prediction_value(sigma: f64, x1: f64, x2: f64, horizon: usize, recursive: bool) -> Result<Value, Error> {
    let cfg = preset("duffing");
    let data = snapshots(&cfg, DUFFING_IC, 1)?;
    let kernel = WeightedKernelSum::single(PrimitiveKernel::Rbf { sigma });
    let centers = subsample_centers(&data, CENTERS, cfg.train.seed)?;
    let mut model = fit_sk(&kernel, &centers, cfg.eval_beta_koop())?;
    model.fit_projection(cfg.train.beta_modes)?;
    model.fit_modes(cfg.train.beta_modes)?;
    let x0 = [x1, x2];
    let truth = cfg.system.simulate(&x0, horizon)?;
    let method = if recursive {
        PredictMethod::Recursive
    } else {
        PredictMethod::Spectral
    };
    let (pred, diverged) = match model.predict(&x0, horizon, method) {
        Ok(p) => (p, None),
        Err(Error::Diverged { last_finite_step }) => (
            model.predict(&x0, last_finite_step, method)?,
            Some(last_finite_step + 1),
        ),
        Err(e) => return Err(e),
    };
    let predicted: Vec<[f64; 2]> = (0..pred.nrows()).map(|i| [pred[(i, 0)], pred[(i, 1)]]).collect();
    Ok(json!({
        "truth": truth.iter().map(|x| [x[0], x[1]]).collect::<Vec<_>>(),
        "predicted": predicted,
        "diverged_at": diverged,
    }))
}

/// A few epochs of kernel learning on Duffing data from width `sigma0`.
pub fn duffing_training_value(sigma0: f64, learning_rate: f64, epochs: usize) -> Result<Value, Error> {
    let cfg = preset("duffing");
    let data = snapshots(&cfg, DUFFING_IC, cfg.data.train_stride)?;
    let mut tc = cfg.train.clone();
    tc.learning_rate = learning_rate;
    tc.epochs = epochs.clamp(1, 50);
    tc.tracking.sk = false;
    let start = WeightedKernelSum::single(PrimitiveKernel::Rbf { sigma: sigma0 });
    match trainer::train(&start, &data, &tc) {
        Ok((k, h)) => Ok(json!({
            "epochs": h.epochs.iter().map(|e| json!({
                "epoch": e.epoch,
                "pred": e.mean.pred,
                "sigma": e.params[1],
            })).collect::<Vec<_>>(),
            "sigma": k.inner_params()[0],
            "error": null,
        })),
        Err(Error::LossNotFinite { epoch, batch, .. }) => Ok(json!({
            "epochs": [],
            "sigma": null,
            "error": format!("loss became non-finite at epoch {epoch}, batch {batch}"),
        })),
        Err(e) => Err(e),
    }
}

#[wasm_bindgen]
pub fn modulo_spectrum(sigma: f64, n_centers: usize) -> Result<String, JsValue> {
    to_js(modulo_spectrum_value(sigma, n_centers))
}

#[wasm_bindgen]
pub fn duffing_prediction(sigma: f64, x1: f64, x2: f64, horizon: usize, recursive: bool) -> Result<String, JsValue> {
    to_js(duffing_prediction_value(sigma, x1, x2, horizon, recursive))
}

#[wasm_bindgen]
pub fn duffing_training(sigma0: f64, learning_rate: f64, epochs: usize) -> Result<String, JsValue> {
    to_js(duffing_training_value(sigma0, learning_rate, epochs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modulo_spectrum_has_all_parts() {
        let v = modulo_spectrum_value(5.0, 40).unwrap();
        assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 40);
        assert_eq!(v["residuals"].as_array().unwrap().len(), 40);
        assert_eq!(v["truth"].as_array().unwrap().len(), 20);
    }

    #[test]
    fn duffing_prediction_lengths() {
        let v = duffing_prediction_value(3.0, 0.5, -0.5, 12, false).unwrap();
        assert_eq!(v["truth"].as_array().unwrap().len(), 13);
        assert!(v["predicted"].as_array().unwrap().len() <= 12);
    }

    #[test]
    fn training_reports_each_epoch() {
        let v = duffing_training_value(3.0, 1e-3, 2).unwrap();
        assert_eq!(v["epochs"].as_array().unwrap().len(), 2);
        assert!(v["sigma"].as_f64().unwrap().is_finite());
    }
}
