pub mod estimate;
pub mod fit;
pub mod oracle;
pub mod simulate;

pub(crate) fn num(v: f64) -> String {
    if v.is_nan() {
        String::from("NA")
    } else {
        format!("{v}")
    }
}
