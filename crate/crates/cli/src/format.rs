//! Fixed-width numeric formatting and CSV assembly for scan outputs.

use doubling_lab_core::Result;

/// Formats `x` with nine significant digits: plain decimal for magnitudes in
/// `[10⁻⁴, 10⁹)`, scientific otherwise.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exponent) {
        format!("{:.*}", (8 - exponent) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

/// Renders a header and numeric rows as CSV with [`sig9`] cells.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| doubling_lab_core::Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| sig9(v))).map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| doubling_lab_core::Error::InvalidArgument(format!("csv: {e}")))
}
