//! Resolves a `--data` argument into training and evaluation splits.
//!
//! * a directory holding `data_batch_1.bin`: CIFAR-10 binary, evaluated on
//!   its test batch;
//! * a file: a manifest of PPM images, evaluated on itself;
//! * `synthetic[:key=value,...]` with keys `classes`, `per_class`, `size`,
//!   `seed`: the synthetic grating set, evaluated on itself.

use std::path::Path;

use qaxnet::data::{load_cifar10_binary, load_manifest, synthetic_classification_dataset, Dataset, CIFAR_TRAIN_FILES};
use qaxnet::{Error, Result};

pub struct Splits {
    pub train: Dataset,
    pub eval: Dataset,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Synthetic {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for Synthetic {
    fn default() -> Self {
        Synthetic {
            classes: 10,
            per_class: 50,
            size: 32,
            seed: 0,
        }
    }
}

pub fn parse_synthetic(arg: &str) -> Result<Option<Synthetic>> {
    let Some(rest) = arg.strip_prefix("synthetic") else {
        return Ok(None);
    };
    let rest = match rest.strip_prefix(':') {
        Some(r) => r,
        None if rest.is_empty() => "",
        None => return Ok(None),
    };
    let mut s = Synthetic::default();
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("synthetic option `{pair}` is not key=value")))?;
        let bad = || Error::Config(format!("synthetic option `{k}` has invalid value `{v}`"));
        match k.trim() {
            "classes" => s.classes = v.trim().parse().map_err(|_| bad())?,
            "per_class" => s.per_class = v.trim().parse().map_err(|_| bad())?,
            "size" => s.size = v.trim().parse().map_err(|_| bad())?,
            "seed" => s.seed = v.trim().parse().map_err(|_| bad())?,
            other => return Err(Error::Config(format!("unknown synthetic option `{other}`"))),
        }
    }
    Ok(Some(s))
}

pub fn load(arg: &str) -> Result<Splits> {
    if let Some(s) = parse_synthetic(arg)? {
        let data = synthetic_classification_dataset(s.classes, s.per_class, s.size, s.seed)?;
        return Ok(Splits {
            eval: data.clone(),
            train: data,
            description: format!(
                "synthetic {} classes x {} at {}x{}, seed {}",
                s.classes, s.per_class, s.size, s.size, s.seed
            ),
        });
    }
    let path = Path::new(arg);
    if path.is_dir() {
        if !path.join(CIFAR_TRAIN_FILES[0]).is_file() {
            return Err(Error::Config(format!(
                "{arg}: directory has no {}; expected CIFAR-10 binary batches",
                CIFAR_TRAIN_FILES[0]
            )));
        }
        let (train, eval) = load_cifar10_binary(path)?;
        return Ok(Splits {
            description: format!("CIFAR-10 {arg}: {} train, {} test", train.len(), eval.len()),
            train,
            eval,
        });
    }
    if path.is_file() {
        let data = load_manifest(path)?;
        return Ok(Splits {
            description: format!("manifest {arg}: {} images, {} classes", data.len(), data.class_count()),
            eval: data.clone(),
            train: data,
        });
    }
    Err(Error::Config(format!(
        "{arg}: not a CIFAR-10 directory, manifest file, or synthetic[:...] source"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_options() {
        assert_eq!(parse_synthetic("synthetic").unwrap(), Some(Synthetic::default()));
        let s = parse_synthetic("synthetic:classes=3,size=8,seed=2").unwrap().unwrap();
        assert_eq!((s.classes, s.per_class, s.size, s.seed), (3, 50, 8, 2));
        assert_eq!(parse_synthetic("synthetics").unwrap(), None);
        assert_eq!(parse_synthetic("data/x").unwrap(), None);
        assert!(parse_synthetic("synthetic:colour=1").is_err());
        assert!(parse_synthetic("synthetic:size=big").is_err());
    }
}
