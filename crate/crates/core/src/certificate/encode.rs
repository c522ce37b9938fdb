use serde::{Deserialize, Serialize};

use super::{CausalChain, CertificateError, Demographics, YearRange, AGE_CLASSES, GENDER_STATES, LINES};
use crate::icd10::{Vocabulary, PAD};

/// A 6 x `width` matrix of vocabulary indices, row-major, right-padded with
/// [`PAD`]. Row `r` holds line `r + 1`, column `c` the rank within the line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeGrid {
    width: usize,
    cells: Vec<u32>,
}

impl CodeGrid {
    /// A grid with every cell set to PAD.
    pub fn blank(width: usize) -> CodeGrid {
        CodeGrid {
            width,
            cells: vec![PAD; LINES * width],
        }
    }

    /// Wraps row-major cells; `cells` must hold exactly `6 * width` entries.
    pub fn from_cells(width: usize, cells: Vec<u32>) -> Result<CodeGrid, CertificateError> {
        if width == 0 {
            return Err(CertificateError::ZeroWidth);
        }
        if cells.len() != LINES * width {
            return Err(CertificateError::CategoryOutOfRange {
                field: "grid cells",
                value: cells.len() as i64,
                range: format!("{}..={}", LINES * width, LINES * width),
            });
        }
        Ok(CodeGrid { width, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.cells[row * self.width + col]
    }

    pub fn non_pad(&self) -> usize {
        self.cells.iter().filter(|&&c| c != PAD).count()
    }

    /// Re-pads the grid to a larger width.
    pub fn widen(&self, width: usize) -> CodeGrid {
        assert!(width >= self.width);
        let mut cells = vec![PAD; LINES * width];
        for r in 0..LINES {
            cells[r * width..r * width + self.width]
                .copy_from_slice(&self.cells[r * self.width..(r + 1) * self.width]);
        }
        CodeGrid { width, cells }
    }
}

/// Places each line's codes left-aligned in its row; every other cell is PAD.
pub fn encode_grid(chain: &CausalChain, vocab: &Vocabulary, width: usize) -> Result<CodeGrid, CertificateError> {
    if width == 0 {
        return Err(CertificateError::ZeroWidth);
    }
    let mut cells = vec![PAD; LINES * width];
    for (r, line) in chain.lines().iter().enumerate() {
        if line.len() > width {
            return Err(CertificateError::LineTooLong {
                line: r + 1,
                len: line.len(),
                width,
            });
        }
        for (c, code) in line.iter().enumerate() {
            cells[r * width + c] = vocab
                .index_of(code)
                .map_err(|_| CertificateError::OutOfVocabulary { code: *code, line: r + 1 })?;
        }
    }
    Ok(CodeGrid { width, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographicOneHots {
    pub gender: Vec<f64>,
    pub age: Vec<f64>,
    pub year: Vec<f64>,
}

pub fn encode_demographics(demo: &Demographics, years: YearRange) -> Result<DemographicOneHots, CertificateError> {
    let demo = Demographics::new(demo.gender, demo.age_class, demo.year)?;
    let year = years.category(demo.year)?;
    let one_hot = |n: usize, at: usize| {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    };
    Ok(DemographicOneHots {
        gender: one_hot(GENDER_STATES, demo.gender as usize - 1),
        age: one_hot(AGE_CLASSES, demo.age_class as usize),
        year: one_hot(years.states, year),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::{code, Code};
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["I46", "I21", "E11", "J18", "C34"].map(code)).unwrap()
    }

    #[test]
    fn direct_placement() {
        let v = vocab();
        let chain = CausalChain::from_parts(&[vec![code("I46")], vec![code("I21")]], &[]).unwrap();
        let g = encode_grid(&chain, &v, 20).unwrap();
        assert_eq!(g.get(0, 0), v.index_of(&code("I46")).unwrap());
        assert_eq!(g.get(1, 0), v.index_of(&code("I21")).unwrap());
        assert_eq!(g.non_pad(), 2);
        assert_eq!(g.cells().len(), 120);
    }

    #[test]
    fn oversize_line_needs_wider_grid() {
        let v = Vocabulary::build((0..30).map(|i| code(&format!("A{i:02}")))).unwrap();
        let line: Vec<Code> = (0..21).map(|i| code(&format!("A{i:02}"))).collect();
        let chain = CausalChain::from_parts(&[line], &[]).unwrap();
        let err = encode_grid(&chain, &v, 20).unwrap_err();
        assert!(matches!(err, CertificateError::LineTooLong { line: 1, len: 21, width: 20 }));
        assert!(err.to_string().contains("larger width"));
        assert!(encode_grid(&chain, &v, 24).is_ok());
    }

    #[test]
    fn out_of_vocabulary_names_code_and_line() {
        let chain = CausalChain::from_parts(&[vec![code("I46")], vec![code("Z99")]], &[]).unwrap();
        let err = encode_grid(&chain, &vocab(), 20).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Z99") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn one_hots() {
        let years = YearRange::default();
        let d = Demographics::new(2, 24, 2000).unwrap();
        let e = encode_demographics(&d, years).unwrap();
        assert_eq!(e.gender, vec![0.0, 1.0]);
        assert_eq!(e.year.len(), 16);
        assert_eq!(e.year[0], 1.0);
        assert_eq!(e.age.len(), 25);
        assert_eq!(e.age[24], 1.0);
        for v in [&e.gender, &e.age, &e.year] {
            assert_eq!(v.iter().sum::<f64>(), 1.0);
        }
        let late = Demographics { gender: 1, age_class: 3, year: 2016 };
        assert!(encode_demographics(&late, years).is_err());
    }

    fn chain_strategy() -> impl Strategy<Value = CausalChain> {
        let codes = ["I46", "I21", "E11", "J18", "C34"];
        let line = prop::collection::vec(prop::sample::select(codes.to_vec()), 0..4);
        prop::array::uniform6(line)
            .prop_filter("part one", |ls| ls[..4].iter().any(|l| !l.is_empty()))
            .prop_map(|ls| CausalChain::new(ls.map(|l| l.into_iter().map(code).collect())).unwrap())
    }

    proptest! {
        #[test]
        fn sparsity_and_right_padding(chain in chain_strategy()) {
            let g = encode_grid(&chain, &vocab(), 6).unwrap();
            prop_assert_eq!(g.non_pad(), chain.code_count());
            for r in 0..LINES {
                let row = &g.cells()[r * 6..(r + 1) * 6];
                let used = row.iter().take_while(|&&c| c != PAD).count();
                prop_assert!(row[used..].iter().all(|&c| c == PAD));
            }
        }

        #[test]
        fn injective(a in chain_strategy(), b in chain_strategy()) {
            let v = vocab();
            let ga = encode_grid(&a, &v, 6).unwrap();
            let gb = encode_grid(&b, &v, 6).unwrap();
            prop_assert_eq!(a == b, ga == gb);
        }
    }
}
