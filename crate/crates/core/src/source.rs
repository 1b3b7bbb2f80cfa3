//! Scalar data functions on the unit square: source terms and Neumann data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value,
};

use crate::error::{Error, Result};

#[derive(Clone)]
pub enum ScalarFunction {
    /// `-2x + 3y + sin(2πx) sin(2πy)`
    F1,
    /// `1/2 - x² + y² + cos(3πx/2 + πy)`
    F2,
    Constant(f64),
    /// Expression in `x` and `y`, with `pi` available.
    Expr { text: String, tree: Node<DefaultNumericTypes> },
}

impl ScalarFunction {
    pub fn zero() -> Self {
        ScalarFunction::Constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFunction::Constant(c) if *c == 0.0)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            ScalarFunction::F1 => -2.0 * x + 3.0 * y + (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
            ScalarFunction::F2 => 0.5 - x * x + y * y + (1.5 * PI * x + PI * y).cos(),
            ScalarFunction::Constant(c) => *c,
            ScalarFunction::Expr { tree, .. } => eval_tree(tree, x, y).expect("expression validated at parse time"),
        }
    }
}

fn eval_tree(tree: &Node<DefaultNumericTypes>, x: f64, y: f64) -> std::result::Result<f64, String> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    for (name, v) in [("x", x), ("y", y), ("pi", PI)] {
        ctx.set_value(name.into(), Value::Float(v)).map_err(|e| e.to_string())?;
    }
    tree.eval_number_with_context(&ctx).map_err(|e| e.to_string())
}

impl FromStr for ScalarFunction {
    type Err = Error;

    /// `f1`, `f2`, a number, or an expression in `x`, `y`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "f1" => return Ok(ScalarFunction::F1),
            "f2" => return Ok(ScalarFunction::F2),
            _ => {}
        }
        if let Ok(c) = t.parse::<f64>() {
            return Ok(ScalarFunction::Constant(c));
        }
        let tree = build_operator_tree::<DefaultNumericTypes>(t)
            .map_err(|e| Error::config(format!("cannot parse expression `{t}`: {e}")))?;
        eval_tree(&tree, 0.25, 0.75).map_err(|e| Error::config(format!("cannot evaluate expression `{t}`: {e}")))?;
        Ok(ScalarFunction::Expr {
            text: t.to_string(),
            tree,
        })
    }
}

impl fmt::Display for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFunction::F1 => f.write_str("f1"),
            ScalarFunction::F2 => f.write_str("f2"),
            ScalarFunction::Constant(c) => write!(f, "{c}"),
            ScalarFunction::Expr { text, .. } => f.write_str(text),
        }
    }
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFunction({self})")
    }
}

impl PartialEq for ScalarFunction {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl serde::Serialize for ScalarFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for ScalarFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) => Ok(ScalarFunction::Constant(c)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins() {
        let f1: ScalarFunction = "f1".parse().unwrap();
        assert!((f1.eval(0.25, 0.25) - (-0.5 + 0.75 + 1.0)).abs() < 1e-14);
        let f2: ScalarFunction = "f2".parse().unwrap();
        assert!((f2.eval(0.0, 0.0) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn constants_and_expressions() {
        let c: ScalarFunction = "2.5".parse().unwrap();
        assert_eq!(c.eval(0.3, 0.1), 2.5);
        let e: ScalarFunction = "x * y + sin(pi * x)".replace("sin", "math::sin").parse().unwrap();
        assert!((e.eval(0.5, 2.0) - 2.0).abs() < 1e-14);
        assert!("x +* y".parse::<ScalarFunction>().is_err());
        assert!("z".parse::<ScalarFunction>().is_err());
    }
}
