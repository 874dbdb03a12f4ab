//! Fixed-precision number formatting for result files.
//!
//! All reals written by the harness use 17 significant digits in scientific
//! notation, which round-trips every finite `f64` exactly.

use serde::Serializer;
use serde_json::value::RawValue;

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn serialize_f17<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !v.is_finite() {
        return s.serialize_none();
    }
    let raw = RawValue::from_string(fmt17(*v)).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&raw)
}

pub fn serialize_vec_f17<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    match v {
        None => s.serialize_none(),
        Some(xs) => {
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                let raw = RawValue::from_string(fmt17(*x)).map_err(serde::ser::Error::custom)?;
                seq.serialize_element(&raw)?;
            }
            seq.end()
        }
    }
}
