use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{CausalChain, Certificate, CertificateError, Demographics, RuleOutput, LINES};
use crate::icd10::{Code, Vocabulary};

/// Column order of the dataset file. The header line is mandatory.
pub const DATASET_HEADER: [&str; 12] = [
    "id",
    "gender",
    "age_class",
    "year",
    "line_1",
    "line_2",
    "line_3",
    "line_4",
    "line_5",
    "line_6",
    "label",
    "rule_output",
];

/// A code that parsed but is absent from the vocabulary it was checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCode {
    pub line: u64,
    pub id: String,
    pub field: &'static str,
    pub code: Code,
}

#[derive(Debug, Clone)]
pub struct DatasetRead {
    pub certificates: Vec<Certificate>,
    pub unknown: Vec<UnknownCode>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CertificateError {
    CertificateError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_dataset(certificates: &[Certificate], path: &Path) -> Result<(), CertificateError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = DATASET_HEADER.join("\t");
    line.push('\n');
    out.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
    for c in certificates {
        if c.id.is_empty() || c.id.contains(['\t', '\n', '\r']) {
            return Err(io_err(path, format!("record id {:?} is empty or contains a separator", c.id)));
        }
        line.clear();
        line.push_str(&c.id);
        line.push_str(&format!("\t{}\t{}\t{}", c.demo.gender, c.demo.age_class, c.demo.year));
        for l in c.chain.lines() {
            line.push('\t');
            let codes: Vec<&str> = l.iter().map(Code::as_str).collect();
            line.push_str(&codes.join(" "));
        }
        line.push('\t');
        if let Some(label) = c.label {
            line.push_str(label.as_str());
        }
        line.push('\t');
        if let Some(r) = c.rule_output {
            line.push_str(&r.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Certificate>, CertificateError> {
    Ok(read_impl(path, None)?.certificates)
}

/// Reads a dataset and flags every code missing from `vocab`. Such codes are
/// kept in the certificates.
pub fn read_dataset_checked(path: &Path, vocab: &Vocabulary) -> Result<DatasetRead, CertificateError> {
    read_impl(path, Some(vocab))
}

fn read_impl(path: &Path, vocab: Option<&Vocabulary>) -> Result<DatasetRead, CertificateError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(CertificateError::Record {
            path: path.display().to_string(),
            line: 1,
            field: "header".into(),
            message: format!("expected {:?}", DATASET_HEADER.join("\t")),
        });
    }
    let mut certificates = Vec::new();
    let mut unknown = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let fail = |field: &str, message: String| CertificateError::Record {
            path: path.display().to_string(),
            line,
            field: field.to_string(),
            message,
        };
        if rec.len() != DATASET_HEADER.len() {
            return Err(fail(
                "record",
                format!("expected {} fields, found {}", DATASET_HEADER.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(fail("id", "empty id".into()));
        }
        let int = |i: usize| -> Result<i64, CertificateError> {
            rec[i]
                .parse::<i64>()
                .map_err(|e| fail(DATASET_HEADER[i], format!("{:?}: {e}", &rec[i])))
        };
        let gender = int(1)?;
        let age = int(2)?;
        let year = int(3)?;
        let demo = Demographics::new(
            u8::try_from(gender).unwrap_or(0),
            u8::try_from(age).unwrap_or(u8::MAX),
            u16::try_from(year).map_err(|_| fail("year", format!("{year} is not a year")))?,
        )
        .map_err(|e| match &e {
            CertificateError::CategoryOutOfRange { field, .. } => fail(field, e.to_string()),
            _ => fail("demographics", e.to_string()),
        })?;
        let mut lines: [Vec<Code>; LINES] = Default::default();
        for (l, slot) in lines.iter_mut().enumerate() {
            let field = DATASET_HEADER[4 + l];
            for tok in rec[4 + l].split(' ').filter(|t| !t.is_empty()) {
                let code = Code::parse(tok).map_err(|e| fail(field, e.to_string()))?;
                if vocab.is_some_and(|v| !v.contains(&code)) {
                    unknown.push(UnknownCode { line, id: id.clone(), field, code });
                }
                slot.push(code);
            }
        }
        let chain = CausalChain::new(lines).map_err(|e| fail("line_1", e.to_string()))?;
        let label = match &rec[10] {
            "" => None,
            t => {
                let code = Code::parse(t).map_err(|e| fail("label", e.to_string()))?;
                if vocab.is_some_and(|v| !v.contains(&code)) {
                    unknown.push(UnknownCode { line, id: id.clone(), field: "label", code });
                }
                Some(code)
            }
        };
        let rule_output = match &rec[11] {
            "" => None,
            "REJECT" => Some(RuleOutput::Reject),
            t => Some(RuleOutput::Code(
                Code::parse(t).map_err(|e| fail("rule_output", e.to_string()))?,
            )),
        };
        certificates.push(Certificate {
            id,
            chain,
            demo,
            label,
            rule_output,
        });
    }
    Ok(DatasetRead { certificates, unknown })
}
