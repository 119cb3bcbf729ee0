//! Text model format.
//!
//! ```text
//! nocguard-model 1
//! kind detector
//! radix 8
//! conv.weight 8 4 3 3
//! <values, row-major, shortest round-trip decimal, 8 per line>
//! conv.bias 8
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{DetectorModel, Model, SegmentorModel};
use crate::error::{Error, Result};

const MAGIC: &str = "nocguard-model 1";
const PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Detector(DetectorModel),
    Segmentor(SegmentorModel),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Detector(_) => "detector",
            AnyModel::Segmentor(_) => "segmentor",
        }
    }

    pub fn radix(&self) -> usize {
        match self {
            AnyModel::Detector(m) => m.radix,
            AnyModel::Segmentor(m) => m.radix,
        }
    }
}

/// Parameter blocks in file order: name, shape, values.
fn blocks(model: &AnyModel) -> Vec<(&'static str, Vec<usize>, &[f64])> {
    match model {
        AnyModel::Detector(m) => {
            let c = &m.conv;
            vec![
                (
                    "conv.weight",
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    &c.weights[..],
                ),
                ("conv.bias", vec![c.out_channels], &c.bias[..]),
                (
                    "dense.weight",
                    vec![m.dense.weights.len(), 1],
                    &m.dense.weights[..],
                ),
                ("dense.bias", vec![1], std::slice::from_ref(&m.dense.bias)),
            ]
        }
        AnyModel::Segmentor(m) => {
            let mut v = Vec::new();
            for (w, b, c) in [
                ("conv1.weight", "conv1.bias", &m.conv1),
                ("conv2.weight", "conv2.bias", &m.conv2),
                ("head.weight", "head.bias", &m.head),
            ] {
                v.push((
                    w,
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    &c.weights[..],
                ));
                v.push((b, vec![c.out_channels], &c.bias[..]));
            }
            v
        }
    }
}

pub fn write_model(model: &AnyModel) -> String {
    let mut out = format!("{MAGIC}\nkind {}\nradix {}\n", model.kind(), model.radix());
    for (name, shape, values) in blocks(model) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{name} {}", dims.join(" "));
        for line in values.chunks(PER_LINE) {
            let vals: Vec<String> = line.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Model(msg.into())
}

pub fn parse_model(text: &str) -> Result<AnyModel> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing model header"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| corrupt(format!("missing `{key}`")))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(corrupt(format!("expected `{key}`, found `{line}`"))),
        }
    };
    let kind = field("kind")?;
    let radix: usize = field("radix")?
        .parse()
        .map_err(|_| corrupt("radix is not an integer"))?;
    if radix < 2 {
        return Err(corrupt(format!("radix {radix} too small")));
    }
    let mut model = match kind.as_str() {
        "detector" => AnyModel::Detector(DetectorModel::zeros(radix)),
        "segmentor" => AnyModel::Segmentor(SegmentorModel::zeros(radix)),
        other => return Err(corrupt(format!("unknown model kind `{other}`"))),
    };
    let expected: Vec<(&str, Vec<usize>)> =
        blocks(&model).into_iter().map(|(n, s, _)| (n, s)).collect();
    let mut loaded: Vec<Vec<f64>> = Vec::new();
    let mut tokens = lines.flat_map(str::split_whitespace);
    for (name, shape) in &expected {
        let got = tokens
            .next()
            .ok_or_else(|| corrupt(format!("truncated before `{name}`")))?;
        if got != *name {
            return Err(corrupt(format!("expected block `{name}`, found `{got}`")));
        }
        for (i, &d) in shape.iter().enumerate() {
            let tok = tokens
                .next()
                .ok_or_else(|| corrupt(format!("truncated shape of `{name}`")))?;
            let v: usize = tok
                .parse()
                .map_err(|_| corrupt(format!("bad dimension `{tok}` in `{name}`")))?;
            if v != d {
                return Err(corrupt(format!(
                    "`{name}` dimension {i} is {v}, R={radix} requires {d}"
                )));
            }
        }
        let n: usize = shape.iter().product();
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let tok = tokens
                .next()
                .ok_or_else(|| corrupt(format!("truncated values of `{name}`")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| corrupt(format!("bad number `{tok}` in `{name}`")))?;
            if !v.is_finite() {
                return Err(corrupt(format!("non-finite weight in `{name}`")));
            }
            vals.push(v);
        }
        loaded.push(vals);
    }
    match tokens.next() {
        Some("end") => {}
        Some(t) => return Err(corrupt(format!("unexpected `{t}` after last block"))),
        None => return Err(corrupt("missing `end` marker")),
    }
    if let Some(t) = tokens.next() {
        return Err(corrupt(format!("trailing data `{t}`")));
    }
    let slices: Vec<&mut [f64]> = match &mut model {
        AnyModel::Detector(m) => m.param_slices_mut(),
        AnyModel::Segmentor(m) => m.param_slices_mut(),
    };
    for (dst, src) in slices.into_iter().zip(loaded) {
        dst.copy_from_slice(&src);
    }
    Ok(model)
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

/// Load a detector and require it to match mesh radix `radix`.
pub fn load_detector(path: &Path, radix: usize) -> Result<DetectorModel> {
    match load_model(path)? {
        AnyModel::Detector(m) if m.radix == radix => Ok(m),
        AnyModel::Detector(m) => Err(Error::Model(format!(
            "{} holds a detector for R={}, need R={radix}",
            path.display(),
            m.radix
        ))),
        other => Err(Error::Model(format!(
            "{} holds a {}, need a detector",
            path.display(),
            other.kind()
        ))),
    }
}

/// Load a segmentor and require it to match mesh radix `radix`.
pub fn load_segmentor(path: &Path, radix: usize) -> Result<SegmentorModel> {
    match load_model(path)? {
        AnyModel::Segmentor(m) if m.radix == radix => Ok(m),
        AnyModel::Segmentor(m) => Err(Error::Model(format!(
            "{} holds a segmentor for R={}, need R={radix}",
            path.display(),
            m.radix
        ))),
        other => Err(Error::Model(format!(
            "{} holds a {}, need a segmentor",
            path.display(),
            other.kind()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::Tensor;

    fn input(r: usize, c: usize) -> Tensor {
        Tensor::from_vec(
            c,
            r,
            r,
            (0..c * r * r)
                .map(|i| ((i * 37) % 11) as f64 / 11.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn detector_round_trip_is_bit_exact() {
        let m = DetectorModel::init(8, 21);
        let back = parse_model(&write_model(&AnyModel::Detector(m.clone()))).unwrap();
        let AnyModel::Detector(b) = back else {
            panic!()
        };
        assert_eq!(b, m);
        let x = input(8, 4);
        assert_eq!(
            b.forward(&x).unwrap().to_bits(),
            m.forward(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn segmentor_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seg.model");
        let m = SegmentorModel::init(4, 3);
        save_model(&AnyModel::Segmentor(m.clone()), &p).unwrap();
        let b = load_segmentor(&p, 4).unwrap();
        assert_eq!(
            b.forward(&input(4, 1)).unwrap(),
            m.forward(&input(4, 1)).unwrap()
        );
        assert!(load_segmentor(&p, 8).is_err());
        assert!(load_detector(&p, 4).is_err());
    }

    #[test]
    fn radix_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.model");
        save_model(&AnyModel::Detector(DetectorModel::init(8, 1)), &p).unwrap();
        assert!(load_detector(&p, 16).is_err());
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("radix 8", "radix 16");
        assert!(parse_model(&text).is_err());
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let text = write_model(&AnyModel::Detector(DetectorModel::init(4, 1)));
        assert!(parse_model(&text[..text.len() / 2]).is_err());
        assert!(parse_model(&text.replace("end\n", "")).is_err());
        assert!(parse_model(&text.replace("kind detector", "kind resnet")).is_err());
        assert!(parse_model(&format!("{text}1.0\n")).is_err());
        assert!(parse_model("").is_err());
        let idx = text.find("conv.bias").unwrap();
        let mut bad = text.clone();
        bad.insert_str(idx - 1, " x");
        assert!(parse_model(&bad).is_err());
    }

    #[test]
    fn edited_weight_changes_output() {
        let m = DetectorModel::zeros(4);
        let text = write_model(&AnyModel::Detector(m));
        let edited = text.replace("dense.bias 1\n0.0", "dense.bias 1\n2.0");
        let AnyModel::Detector(e) = parse_model(&edited).unwrap() else {
            panic!()
        };
        let p = e.forward(&Tensor::zeros(4, 4, 4)).unwrap();
        assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }
}
