//! CSV emission. Every file has a header row; reals use 17 significant digits.

use std::io::{self, Write};

use crate::scalar::Scalar;

/// Formats a real with 17 significant digits.
pub fn num<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

pub fn write_curve<T: Scalar, W: Write>(mut out: W, column: &str, times: &[T], values: &[T]) -> io::Result<()> {
    writeln!(out, "t,{column}")?;
    for (t, v) in times.iter().zip(values) {
        writeln!(out, "{},{}", num(*t), num(*v))?;
    }
    out.flush()
}

/// Several curves sharing a time column.
pub fn write_table<T: Scalar, W: Write>(
    mut out: W,
    columns: &[String],
    times: &[T],
    series: &[Vec<T>],
) -> io::Result<()> {
    write!(out, "t")?;
    for c in columns {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for (i, t) in times.iter().enumerate() {
        write!(out, "{}", num(*t))?;
        for s in series {
            write!(out, ",{}", num(s[i]))?;
        }
        writeln!(out)?;
    }
    out.flush()
}
