use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn opt_sig17(v: Option<f64>) -> String {
    v.map(sig17).unwrap_or_default()
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig17_round_trips() {
        for v in [5.317, 1.0 / 3.0, -2.5e-300, 0.0, 123456789.12345679] {
            assert_eq!(sig17(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(opt_sig17(None), "");
    }
}
