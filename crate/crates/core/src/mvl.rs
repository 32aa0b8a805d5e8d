//! g-valued logic functions, their complex spectra and single stuck-at
//! fault testability.
//!
//! Inputs are indexed by `u = u_1 + u_2 g + ... + u_n g^(n-1)` (input 1 is
//! the least significant digit). The forward kernel is
//! `t_w(u) = exp(-i 2 pi / g * sum_k w_k u_k)`; the inverse uses its complex
//! conjugate scaled by `1 / g^n`, so the pair is an exact inverse.
//!
//! The syndrome of a function is the sum of its outputs, i.e. `s_0`. Pinning
//! input `i` to `v` changes the syndrome by
//! `sum_{k=1}^{g-1} conj(t_{k e_i}(v e_i)) s_{k e_i}`, which is what
//! [`stuck_testable`] evaluates; [`fault_oracle`] simulates the fault
//! directly.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A g-valued, n-input logic function stored as a full truth table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvlFunction {
    g: u32,
    n: u32,
    table: Vec<u32>,
}

fn table_len(g: u32, n: u32) -> Result<usize> {
    if g < 2 {
        return Err(Error::InvalidParameter(format!("radix must be >= 2, got {g}")));
    }
    if n < 1 {
        return Err(Error::InvalidParameter("arity must be >= 1".into()));
    }
    (g as usize)
        .checked_pow(n)
        .filter(|&len| len <= 1 << 24)
        .ok_or_else(|| Error::InvalidParameter(format!("table for g={g}, n={n} too large")))
}

impl MvlFunction {
    pub fn new(g: u32, n: u32, table: Vec<u32>) -> Result<Self> {
        let len = table_len(g, n)?;
        if table.len() != len {
            return Err(Error::LengthMismatch {
                left: table.len(),
                right: len,
            });
        }
        if let Some(bad) = table.iter().find(|&&v| v >= g) {
            return Err(Error::InvalidParameter(format!("output {bad} not below radix {g}")));
        }
        Ok(Self { g, n, table })
    }

    /// Builds the table by evaluating `f` on each digit vector `(u_1..u_n)`.
    pub fn from_fn(g: u32, n: u32, mut f: impl FnMut(&[u32]) -> u32) -> Result<Self> {
        let len = table_len(g, n)?;
        let table = (0..len).map(|u| f(&digits(u, g, n))).collect();
        Self::new(g, n, table)
    }

    pub fn constant(g: u32, n: u32, value: u32) -> Result<Self> {
        Self::new(g, n, vec![value; table_len(g, n)?])
    }

    pub fn radix(&self) -> u32 {
        self.g
    }

    pub fn arity(&self) -> u32 {
        self.n
    }

    pub fn table(&self) -> &[u32] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Sum of all outputs.
    pub fn syndrome(&self) -> u64 {
        self.table.iter().map(|&v| v as u64).sum()
    }

    /// Function with input `fault.input_index` pinned to `fault.stuck_value`.
    pub fn with_fault(&self, fault: StuckFault) -> Result<Self> {
        fault.check(self)?;
        let stride = (self.g as usize).pow(fault.input_index as u32 - 1);
        let g = self.g as usize;
        let table = (0..self.len())
            .map(|u| {
                let digit = (u / stride) % g;
                let pinned = u - digit * stride + fault.stuck_value as usize * stride;
                self.table[pinned]
            })
            .collect();
        Ok(Self {
            g: self.g,
            n: self.n,
            table,
        })
    }

    /// Parses `g n` on the first line followed by `g^n` outputs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.lines().enumerate().flat_map(|(ln, line)| {
            let line = line.split('#').next().unwrap_or("");
            line.split_whitespace().map(move |t| (ln + 1, t))
        });
        let mut header = |what: &str| -> Result<u32> {
            let (line, tok) = tokens.next().ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing {what}"),
            })?;
            tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid {what} '{tok}'"),
            })
        };
        let g = header("radix")?;
        let n = header("arity")?;
        let len = table_len(g, n)?;
        let mut table = Vec::with_capacity(len);
        let mut last_line = 1;
        for (line, tok) in tokens {
            last_line = line;
            let v: u32 = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid output '{tok}'"),
            })?;
            if v >= g {
                return Err(Error::Parse {
                    line,
                    msg: format!("output {v} not below radix {g}"),
                });
            }
            table.push(v);
        }
        if table.len() != len {
            return Err(Error::Parse {
                line: last_line,
                msg: format!("expected {len} outputs, found {}", table.len()),
            });
        }
        Self::new(g, n, table)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.g, self.n);
        let body: Vec<String> = self.table.iter().map(u32::to_string).collect();
        s.push_str(&body.join(" "));
        s.push('\n');
        s
    }
}

/// g-ary digits `(u_1..u_n)` of `u`, least significant first.
pub fn digits(u: usize, g: u32, n: u32) -> Vec<u32> {
    let g = g as usize;
    let mut rest = u;
    (0..n)
        .map(|_| {
            let d = rest % g;
            rest /= g;
            d as u32
        })
        .collect()
}

/// Complex spectrum of a g-valued function.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub g: u32,
    pub n: u32,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zero(g: u32, n: u32) -> Result<Self> {
        Ok(Self {
            g,
            n,
            coeffs: vec![Complex64::new(0.0, 0.0); table_len(g, n)?],
        })
    }

    /// Coefficient at the spectral index with digit `k` in position
    /// `input_index` (1-based) and zeros elsewhere.
    pub fn axis_coeff(&self, input_index: usize, k: u32) -> Complex64 {
        let stride = (self.g as usize).pow(input_index as u32 - 1);
        self.coeffs[k as usize * stride]
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(Complex64::norm_sqr).sum()
    }
}

/// `roots[m] = exp(-i 2 pi m / g)` from exact rational angles.
fn roots_of_unity(g: u32) -> Vec<Complex64> {
    (0..g)
        .map(|m| {
            let angle = 2.0 * std::f64::consts::PI * m as f64 / g as f64;
            Complex64::new(angle.cos(), -angle.sin())
        })
        .collect()
}

/// In-place separable transform: a length-g DFT along every input axis.
fn transform_axes(data: &mut [Complex64], g: u32, n: u32, roots: &[Complex64]) {
    let g_us = g as usize;
    let mut scratch = vec![Complex64::new(0.0, 0.0); g_us];
    let mut stride = 1usize;
    for _ in 0..n {
        let block = stride * g_us;
        for base in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (w, slot) in scratch.iter_mut().enumerate() {
                    *slot = (0..g_us)
                        .map(|u| roots[(w * u) % g_us] * data[start + u * stride])
                        .sum();
                }
                for (w, v) in scratch.iter().enumerate() {
                    data[start + w * stride] = *v;
                }
            }
        }
        stride = block;
    }
}

pub fn forward(f: &MvlFunction) -> Spectrum {
    let mut coeffs: Vec<Complex64> = f
        .table
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect();
    transform_axes(&mut coeffs, f.g, f.n, &roots_of_unity(f.g));
    Spectrum {
        g: f.g,
        n: f.n,
        coeffs,
    }
}

pub fn inverse(s: &Spectrum) -> Vec<Complex64> {
    let roots: Vec<Complex64> = roots_of_unity(s.g).iter().map(Complex64::conj).collect();
    let mut data = s.coeffs.clone();
    transform_axes(&mut data, s.g, s.n, &roots);
    let scale = 1.0 / data.len() as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    data
}

/// Single-input stuck-at fault; `input_index` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StuckFault {
    pub input_index: usize,
    pub stuck_value: u32,
}

impl StuckFault {
    fn check(&self, f: &MvlFunction) -> Result<()> {
        if self.input_index == 0 || self.input_index > f.n as usize {
            return Err(Error::IndexOutOfRange {
                index: self.input_index,
                max: f.n as usize,
            });
        }
        if self.stuck_value >= f.g {
            return Err(Error::InvalidParameter(format!(
                "stuck value {} not below radix {}",
                self.stuck_value, f.g
            )));
        }
        Ok(())
    }

    /// Every single stuck-at fault of an `n`-input, g-valued function.
    pub fn all(g: u32, n: u32) -> Vec<StuckFault> {
        (1..=n as usize)
            .flat_map(|input_index| {
                (0..g).map(move |stuck_value| StuckFault {
                    input_index,
                    stuck_value,
                })
            })
            .collect()
    }
}

/// Syndrome change caused by `fault`, evaluated from the spectrum.
pub fn syndrome_shift(spectrum: &Spectrum, fault: StuckFault) -> Complex64 {
    let g = spectrum.g;
    let roots = roots_of_unity(g);
    (1..g)
        .map(|k| {
            let kernel = roots[((k * fault.stuck_value) % g) as usize].conj();
            kernel * spectrum.axis_coeff(fault.input_index, k)
        })
        .sum()
}

pub fn stuck_testable(f: &MvlFunction, fault: StuckFault) -> Result<bool> {
    fault.check(f)?;
    // the shift is a difference of integer output sums
    Ok(syndrome_shift(&forward(f), fault).norm() > 0.5)
}

/// Brute-force referee: simulate the fault and compare output sums.
pub fn fault_oracle(f: &MvlFunction, fault: StuckFault) -> Result<bool> {
    Ok(f.with_fault(fault)?.syndrome() != f.syndrome())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultVerdict {
    pub fault: StuckFault,
    pub testable: bool,
}

/// Testability of every single stuck-at fault, computed from one spectrum.
pub fn analyze_faults(f: &MvlFunction) -> Vec<FaultVerdict> {
    let spectrum = forward(f);
    StuckFault::all(f.g, f.n)
        .into_iter()
        .map(|fault| FaultVerdict {
            fault,
            testable: syndrome_shift(&spectrum, fault).norm() > 0.5,
        })
        .collect()
}

/// CSV `input_index,stuck_value,testable`.
pub fn fault_report_csv(verdicts: &[FaultVerdict]) -> String {
    let mut out = String::from("input_index,stuck_value,testable\n");
    for v in verdicts {
        let _ = writeln!(out, "{},{},{}", v.fault.input_index, v.fault.stuck_value, v.testable);
    }
    out
}
