use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Forecaster, MlDims, MlModel, PredictorParams, RnnCellParams, Seq2SeqDims, Seq2SeqModel};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CellRecord {
    w_in: Vec<f64>,
    w_rec: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PredictorRecord {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
enum Body {
    Seq2seq {
        dims: Seq2SeqDims,
        encoder: CellRecord,
        decoder: CellRecord,
        predictor: PredictorRecord,
    },
    Ml {
        dims: MlDims,
        cell: CellRecord,
        predictor: PredictorRecord,
    },
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    #[serde(flatten)]
    body: Body,
}

/// Either architecture as stored on disk: one JSON document with
/// `format_version`, `arch`, `dims` and row-major weight arrays.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Seq2Seq(Seq2SeqModel),
    Ml(MlModel),
}

impl CellRecord {
    fn from_cell(c: &RnnCellParams) -> Self {
        CellRecord {
            w_in: c.w_in.as_slice().to_vec(),
            w_rec: c.w_rec.as_slice().to_vec(),
            b: c.b.as_slice().to_vec(),
        }
    }

    fn into_cell(self, n: usize, d_in: usize) -> Result<RnnCellParams> {
        RnnCellParams::new(
            Matrix::from_row_major(n, d_in, self.w_in)?,
            Matrix::from_row_major(n, n, self.w_rec)?,
            Vector::from_vec(self.b),
        )
    }
}

impl PredictorRecord {
    fn from_predictor(p: &PredictorParams) -> Self {
        PredictorRecord {
            w: p.w.as_slice().to_vec(),
            b: p.b.as_slice().to_vec(),
        }
    }

    fn into_predictor(self, d: usize, n: usize) -> Result<PredictorParams> {
        PredictorParams::new(Matrix::from_row_major(d, n, self.w)?, Vector::from_vec(self.b))
    }
}

impl ModelFile {
    pub fn arch(&self) -> &'static str {
        match self {
            ModelFile::Seq2Seq(_) => "seq2seq",
            ModelFile::Ml(_) => "ml",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let body = match self {
            ModelFile::Seq2Seq(m) => Body::Seq2seq {
                dims: m.dims,
                encoder: CellRecord::from_cell(&m.encoder),
                decoder: CellRecord::from_cell(&m.decoder),
                predictor: PredictorRecord::from_predictor(&m.predictor),
            },
            ModelFile::Ml(m) => Body::Ml {
                dims: m.dims,
                cell: CellRecord::from_cell(&m.cell),
                predictor: PredictorRecord::from_predictor(&m.predictor),
            },
        };
        let doc = Document {
            format_version: FORMAT_VERSION,
            body,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        let model = match doc.body {
            Body::Seq2seq {
                dims,
                encoder,
                decoder,
                predictor,
            } => {
                let m = Seq2SeqModel {
                    encoder: encoder.into_cell(dims.n1, dims.d)?,
                    decoder: decoder.into_cell(dims.n2, dims.n1)?,
                    predictor: predictor.into_predictor(dims.d, dims.n2)?,
                    dims,
                };
                m.validate()?;
                ModelFile::Seq2Seq(m)
            }
            Body::Ml {
                dims,
                cell,
                predictor,
            } => {
                let m = MlModel {
                    cell: cell.into_cell(dims.n, dims.d)?,
                    predictor: predictor.into_predictor(dims.d, dims.n)?,
                    dims,
                };
                m.validate()?;
                ModelFile::Ml(m)
            }
        };
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelFile::from_json(&text)
    }
}

impl Forecaster for ModelFile {
    fn forecast(&self, xs: &[Vector], horizon: usize) -> Result<Vec<Vector>> {
        match self {
            ModelFile::Seq2Seq(m) => m.forecast(xs, horizon),
            ModelFile::Ml(m) => m.forecast(xs, horizon),
        }
    }
}
