//! CSV input: comma separated, header row, UTF-8, `.` decimal separator.

use std::fs::File;
use std::path::Path;

use cdep_core::linalg::Matrix;
use cdep_core::Sample;

use crate::AppError;

/// Reads `outcome`, `treatment` and `covariates` by header name. The
/// treatment column must hold 0 or 1.
pub fn load_csv(path: &Path, outcome: &str, treatment: &str, covariates: &[String]) -> Result<Sample, AppError> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    read_csv(file, outcome, treatment, covariates)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
) -> Result<Sample, AppError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AppError::Data(format!("cannot read header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::Data(format!("missing column `{name}`")))
    };
    let iy = col(outcome)?;
    let ix = col(treatment)?;
    let iw = covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut w = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        // 1-based data row numbers, the header being row 0
        let row = r + 1;
        let rec = rec.map_err(|e| AppError::Data(format!("row {row}: {e}")))?;
        let cell = |j: usize, name: &str| -> Result<f64, AppError> {
            let s = rec.get(j).unwrap_or("");
            if s.is_empty() {
                return Err(AppError::Data(format!("empty cell at row {row}, column `{name}`")));
            }
            let v: f64 = s
                .parse()
                .map_err(|_| AppError::Data(format!("non-numeric value `{s}` at row {row}, column `{name}`")))?;
            if !v.is_finite() {
                return Err(AppError::Data(format!("non-finite value at row {row}, column `{name}`")));
            }
            Ok(v)
        };
        y.push(cell(iy, outcome)?);
        let t = cell(ix, treatment)?;
        x.push(match t {
            0.0 => false,
            1.0 => true,
            _ => {
                return Err(AppError::Data(format!(
                    "non-binary treatment value {t} at row {row}, column `{treatment}`"
                )))
            }
        });
        for (&j, name) in iw.iter().zip(covariates) {
            w.push(cell(j, name)?);
        }
    }
    let n = y.len();
    let w = Matrix::from_row_major(n, covariates.len(), w);
    Ok(Sample::new(y, x, w, covariates.to_vec())?)
}

/// Writes a sample in the same dialect.
pub fn write_csv<W: std::io::Write>(writer: W, sample: &Sample, outcome: &str, treatment: &str) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![outcome.to_string(), treatment.to_string()];
    header.extend(sample.names().iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..sample.n() {
        let mut rec = vec![sample.y()[i].to_string(), u8::from(sample.x()[i]).to_string()];
        rec.extend(sample.w_row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
