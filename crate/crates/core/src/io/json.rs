//! JSON output with floats written to 17 significant digits, so every f64
//! survives a write/read round trip bit for bit.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::Result;

fn write_sig17<W: ?Sized + Write>(writer: &mut W, value: f64) -> io::Result<()> {
    if value == 0.0 {
        // keep the sign of negative zero, drop the exponent noise
        return writer.write_all(if value.is_sign_negative() { b"-0.0" } else { b"0.0" });
    }
    write!(writer, "{value:.16e}")
}

macro_rules! delegate_formatter {
    ($name:ident) => {
        impl Formatter for $name {
            fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
                write_sig17(writer, value)
            }
            fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
                write_sig17(writer, value as f64)
            }
            fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.begin_array(w)
            }
            fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.end_array(w)
            }
            fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
                self.0.begin_array_value(w, first)
            }
            fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.end_array_value(w)
            }
            fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.begin_object(w)
            }
            fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.end_object(w)
            }
            fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
                self.0.begin_object_key(w, first)
            }
            fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.end_object_key(w)
            }
            fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.begin_object_value(w)
            }
            fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.end_object_value(w)
            }
        }
    };
}

struct Compact(CompactFormatter);
struct Pretty(PrettyFormatter<'static>);

delegate_formatter!(Compact);
delegate_formatter!(Pretty);

/// One-line JSON (no trailing newline).
pub fn to_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Compact(CompactFormatter));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Indented JSON with a trailing newline.
pub fn to_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Pretty(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_pretty<T: Serialize + ?Sized>(path: &std::path::Path, value: &T) -> Result<()> {
    std::fs::write(path, to_pretty(value)?)?;
    Ok(())
}

/// Formats a float for CSV cells with the same round-trip guarantee;
/// infinities become `inf` / `-inf`.
pub fn fmt_f64(value: f64) -> String {
    if value.is_infinite() {
        return if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if value.is_nan() {
        return "nan".into();
    }
    let mut out = Vec::new();
    write_sig17(&mut out, value).expect("writing to a Vec cannot fail");
    String::from_utf8(out).expect("ASCII")
}
