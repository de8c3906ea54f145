//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every function returns plain numbers or a formatted string so the page
//! needs no glue beyond the generated module.

use qaxnet::axial::{axial_flop_count, full_attention_flop_count};
use qaxnet::quaternion::{hamilton_matrix, hamilton_product, Quaternion};
use qaxnet::zoo::{build, ArchitectureSpec, Variant};
use wasm_bindgen::prelude::*;

fn quaternion(v: &[f64]) -> Result<Quaternion, JsError> {
    let a: [f64; 4] = v
        .try_into()
        .map_err(|_| JsError::new(&format!("a quaternion has 4 components, got {}", v.len())))?;
    Ok(Quaternion::from_array(a))
}

/// `p ⊛ q` as `[r, i, j, k]`.
#[wasm_bindgen]
pub fn hamilton(p: &[f64], q: &[f64]) -> Result<Vec<f64>, JsError> {
    Ok(hamilton_product(quaternion(p)?, quaternion(q)?).to_array().to_vec())
}

/// The 4×4 real matrix of left multiplication by `w`, row-major.
#[wasm_bindgen]
pub fn hamilton_matrix_of(w: &[f64]) -> Result<Vec<f64>, JsError> {
    Ok(hamilton_matrix(quaternion(w)?).iter().flatten().copied().collect())
}

/// `[axial, full]` attention-core multiply-accumulates on a `side×side` map.
#[wasm_bindgen]
pub fn attention_cost(side: usize, channels: usize, heads: usize) -> Result<Vec<f64>, JsError> {
    let err = |e: qaxnet::Error| JsError::new(&e.to_string());
    let axial = axial_flop_count(side, side, channels, heads).map_err(err)?;
    let full = full_attention_flop_count(side, side, channels, heads).map_err(err)?;
    Ok(vec![axial as f64, full as f64])
}

/// One text line per stem, block and head, then layer and parameter totals.
#[wasm_bindgen]
pub fn model_summary(variant: &str, depth: usize, quat_layers: bool) -> Result<String, JsError> {
    let err = |e: qaxnet::Error| JsError::new(&e.to_string());
    let variant: Variant = variant.parse().map_err(err)?;
    let spec = ArchitectureSpec::for_depth(variant, depth).map_err(err)?;
    let model = build::<f32>(&spec, 0).map_err(err)?;
    let rows = model.summarize();
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let shape = r.output.iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
        out.push_str(&format!("{:width$}  {:>12}  {:>10}\n", r.name, shape, r.params));
    }
    out.push_str(&format!(
        "\nlayers: {}\nparams: {}\n",
        model.count_layers(quat_layers),
        model.count_params()
    ));
    Ok(out)
}
