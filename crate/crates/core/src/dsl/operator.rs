//! Operator table and argument signatures.

use std::fmt;

/// Sort of a value on the evaluation stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sort {
    /// A (stock, day) matrix.
    Series,
    /// A broadcast scalar constant.
    Scalar,
    /// A window length.
    TimeDelta,
}

/// What an argument slot accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgSort {
    Series,
    /// Series or Scalar; Scalars broadcast.
    Operand,
    TimeDelta,
}

impl ArgSort {
    pub fn accepts(self, sort: Sort) -> bool {
        match self {
            ArgSort::Series => sort == Sort::Series,
            ArgSort::Operand => sort != Sort::TimeDelta,
            ArgSort::TimeDelta => sort == Sort::TimeDelta,
        }
    }
}

/// Evaluation family, used by the evaluator to dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Elementwise,
    CrossSectional,
    Rolling,
    PairRolling,
    Moment,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Abs,
    Log,
    Sign,
    CSRank,
    Scale,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Greater,
    Less,
    Ref,
    Mean,
    Std,
    Var,
    Sum,
    Max,
    Min,
    Med,
    Mad,
    Delta,
    WMA,
    EMA,
    Rank,
    Argmax,
    Argmin,
    Product,
    Skew,
    Kurt,
    Cov,
    Corr,
    Cond,
}

/// Argument and result sorts of one operator. Every operator returns a Series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorSignature {
    pub operator: Operator,
    pub args: &'static [ArgSort],
    pub kind: OpKind,
}

impl OperatorSignature {
    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn result(&self) -> Sort {
        Sort::Series
    }

    /// Checks a full argument list. Operand slots require at least one Series among them.
    pub fn accepts(&self, sorts: &[Sort]) -> bool {
        if sorts.len() != self.args.len() {
            return false;
        }
        if !self.args.iter().zip(sorts).all(|(a, &s)| a.accepts(s)) {
            return false;
        }
        let mut has_operand = false;
        let mut operand_series = false;
        for (a, &s) in self.args.iter().zip(sorts) {
            if *a == ArgSort::Operand {
                has_operand = true;
                operand_series |= s == Sort::Series;
            }
        }
        !has_operand || operand_series
    }
}

const UNARY: &[ArgSort] = &[ArgSort::Series];
const BINARY: &[ArgSort] = &[ArgSort::Operand, ArgSort::Operand];
const ROLLING: &[ArgSort] = &[ArgSort::Series, ArgSort::TimeDelta];
const PAIR_ROLLING: &[ArgSort] = &[ArgSort::Series, ArgSort::Series, ArgSort::TimeDelta];
const COND: &[ArgSort] = &[
    ArgSort::Operand,
    ArgSort::Operand,
    ArgSort::Operand,
    ArgSort::Operand,
];

impl Operator {
    pub const ALL: [Operator; 33] = [
        Operator::Abs,
        Operator::Log,
        Operator::Sign,
        Operator::CSRank,
        Operator::Scale,
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Pow,
        Operator::Greater,
        Operator::Less,
        Operator::Ref,
        Operator::Mean,
        Operator::Std,
        Operator::Var,
        Operator::Sum,
        Operator::Max,
        Operator::Min,
        Operator::Med,
        Operator::Mad,
        Operator::Delta,
        Operator::WMA,
        Operator::EMA,
        Operator::Rank,
        Operator::Argmax,
        Operator::Argmin,
        Operator::Product,
        Operator::Skew,
        Operator::Kurt,
        Operator::Cov,
        Operator::Corr,
        Operator::Cond,
    ];

    pub fn name(self) -> &'static str {
        use Operator::*;
        match self {
            Abs => "Abs",
            Log => "Log",
            Sign => "Sign",
            CSRank => "CSRank",
            Scale => "Scale",
            Add => "Add",
            Sub => "Sub",
            Mul => "Mul",
            Div => "Div",
            Pow => "Pow",
            Greater => "Greater",
            Less => "Less",
            Ref => "Ref",
            Mean => "Mean",
            Std => "Std",
            Var => "Var",
            Sum => "Sum",
            Max => "Max",
            Min => "Min",
            Med => "Med",
            Mad => "Mad",
            Delta => "Delta",
            WMA => "WMA",
            EMA => "EMA",
            Rank => "Rank",
            Argmax => "Argmax",
            Argmin => "Argmin",
            Product => "Product",
            Skew => "Skew",
            Kurt => "Kurt",
            Cov => "Cov",
            Corr => "Corr",
            Cond => "Cond",
        }
    }

    /// Case-insensitive lookup.
    pub fn from_name(name: &str) -> Option<Operator> {
        Operator::ALL
            .into_iter()
            .find(|op| op.name().eq_ignore_ascii_case(name))
    }

    pub fn signature(self) -> OperatorSignature {
        use Operator::*;
        let (args, kind) = match self {
            Abs | Log | Sign => (UNARY, OpKind::Elementwise),
            CSRank | Scale => (UNARY, OpKind::CrossSectional),
            Add | Sub | Mul | Div | Pow | Greater | Less => (BINARY, OpKind::Elementwise),
            Ref | Mean | Std | Var | Sum | Max | Min | Med | Mad | Delta | WMA | EMA | Rank
            | Argmax | Argmin | Product => (ROLLING, OpKind::Rolling),
            Skew | Kurt => (ROLLING, OpKind::Moment),
            Cov | Corr => (PAIR_ROLLING, OpKind::PairRolling),
            Cond => (COND, OpKind::Conditional),
        };
        OperatorSignature {
            operator: self,
            args,
            kind,
        }
    }

    pub fn arity(self) -> usize {
        self.signature().arity()
    }

    /// Operators printed in infix form by the formula printer.
    pub fn infix_symbol(self) -> Option<char> {
        match self {
            Operator::Add => Some('+'),
            Operator::Sub => Some('-'),
            Operator::Mul => Some('*'),
            Operator::Div => Some('/'),
            _ => None,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_signature_per_listed_operator() {
        // Abs..Corr from the base set plus the eleven added symbols (Delta listed once).
        let listed = [
            "Abs", "Log", "Add", "Sub", "Mul", "Div", "Greater", "Less", "Ref", "Mean", "Std",
            "Var", "Sum", "Max", "Min", "Med", "Mad", "Delta", "WMA", "EMA", "Cov", "Corr",
            "Sign", "CSRank", "Product", "Scale", "Pow", "Skew", "Kurt", "Rank", "Argmax",
            "Argmin", "Cond",
        ];
        assert_eq!(listed.len(), Operator::ALL.len());
        for name in listed {
            let op = Operator::from_name(name).expect(name);
            assert_eq!(op.name(), name);
        }
    }

    #[test]
    fn rolling_windows_are_last() {
        use Operator::*;
        for op in [
            Ref, Mean, Std, Var, Sum, Max, Min, Med, Mad, WMA, EMA, Delta, Rank, Argmax, Argmin,
            Product,
        ] {
            assert_eq!(op.signature().args, &[ArgSort::Series, ArgSort::TimeDelta]);
        }
        for op in [Cov, Corr] {
            assert_eq!(
                op.signature().args,
                &[ArgSort::Series, ArgSort::Series, ArgSort::TimeDelta]
            );
        }
    }

    #[test]
    fn operand_slots_need_a_series() {
        let sig = Operator::Greater.signature();
        assert!(sig.accepts(&[Sort::Series, Sort::Scalar]));
        assert!(sig.accepts(&[Sort::Scalar, Sort::Series]));
        assert!(!sig.accepts(&[Sort::Scalar, Sort::Scalar]));
        assert!(!sig.accepts(&[Sort::Series, Sort::TimeDelta]));
        let cond = Operator::Cond.signature();
        assert!(cond.accepts(&[Sort::Scalar, Sort::Scalar, Sort::Series, Sort::Scalar]));
        assert!(!cond.accepts(&[Sort::Scalar; 4]));
    }
}
