//! Convolution workloads: operator shapes, subnets, encodings and footprints.
//!
//! Feature maps and kernels are square. Padding is implicit: the input
//! extent is always derived from the output extent, stride and kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bitwidths an operand may be quantized to.
pub const LEGAL_BITS: [u32; 3] = [2, 4, 8];

/// Width of an accumulated partial sum in bytes.
pub const PSUM_BYTES: u64 = 4;

/// Convert a bit count to whole bytes, rounding up.
#[inline]
pub fn bits_to_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
struct RawOperator {
    kernel: u32,
    stride: u32,
    out_rows: u32,
    in_channels: u32,
    out_channels: u32,
    act_bits: u32,
    wgt_bits: u32,
}

/// One convolution workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawOperator")]
pub struct OperatorDescriptor {
    kernel: u32,
    stride: u32,
    out_rows: u32,
    in_channels: u32,
    out_channels: u32,
    act_bits: u32,
    wgt_bits: u32,
}

impl TryFrom<RawOperator> for OperatorDescriptor {
    type Error = Error;

    fn try_from(r: RawOperator) -> Result<Self> {
        OperatorDescriptor::new(
            r.kernel,
            r.stride,
            r.out_rows,
            r.in_channels,
            r.out_channels,
            r.act_bits,
            r.wgt_bits,
        )
    }
}

/// Derived sizes used by the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub macs: u64,
    pub act_in_bytes: u64,
    pub wgt_bytes: u64,
    pub out_elems: u64,
}

impl OperatorDescriptor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: u32,
        stride: u32,
        out_rows: u32,
        in_channels: u32,
        out_channels: u32,
        act_bits: u32,
        wgt_bits: u32,
    ) -> Result<Self> {
        Self::new_at(
            0,
            [
                kernel,
                stride,
                out_rows,
                in_channels,
                out_channels,
                act_bits,
                wgt_bits,
            ],
        )
    }

    /// Validate fields, reporting `index` as the operator position on failure.
    fn new_at(index: usize, f: [u32; 7]) -> Result<Self> {
        const NAMES: [&str; 5] = ["kernel", "stride", "out_rows", "in_channels", "out_channels"];
        for (name, &v) in NAMES.iter().zip(f.iter()) {
            if v == 0 {
                return Err(Error::InvalidOperator {
                    index,
                    field: name,
                    reason: "must be at least 1".into(),
                });
            }
        }
        for (name, v) in [("act_bits", f[5]), ("wgt_bits", f[6])] {
            if !LEGAL_BITS.contains(&v) {
                return Err(Error::InvalidOperator {
                    index,
                    field: name,
                    reason: format!("{v} not in {{2,4,8}}"),
                });
            }
        }
        Ok(OperatorDescriptor {
            kernel: f[0],
            stride: f[1],
            out_rows: f[2],
            in_channels: f[3],
            out_channels: f[4],
            act_bits: f[5],
            wgt_bits: f[6],
        })
    }

    pub fn kernel(&self) -> u32 {
        self.kernel
    }
    pub fn stride(&self) -> u32 {
        self.stride
    }
    pub fn out_rows(&self) -> u32 {
        self.out_rows
    }
    pub fn in_channels(&self) -> u32 {
        self.in_channels
    }
    pub fn out_channels(&self) -> u32 {
        self.out_channels
    }
    pub fn act_bits(&self) -> u32 {
        self.act_bits
    }
    pub fn wgt_bits(&self) -> u32 {
        self.wgt_bits
    }

    /// Input feature map side length.
    pub fn in_rows(&self) -> u64 {
        (self.out_rows as u64 - 1) * self.stride as u64 + self.kernel as u64
    }

    /// Same operator with different operand bitwidths.
    pub fn with_bits(&self, act_bits: u32, wgt_bits: u32) -> Result<Self> {
        let mut f = self.encode();
        f[5] = act_bits;
        f[6] = wgt_bits;
        Self::decode(f)
    }

    /// Encoding vector: kernel, stride, out_rows, in_channels, out_channels,
    /// act_bits, wgt_bits.
    pub fn encode(&self) -> [u32; 7] {
        [
            self.kernel,
            self.stride,
            self.out_rows,
            self.in_channels,
            self.out_channels,
            self.act_bits,
            self.wgt_bits,
        ]
    }

    pub fn decode(v: [u32; 7]) -> Result<Self> {
        Self::new_at(0, v)
    }

    pub fn footprint(&self) -> Footprint {
        let k2 = (self.kernel as u64).pow(2);
        let ic = self.in_channels as u64;
        let oc = self.out_channels as u64;
        let o2 = (self.out_rows as u64).pow(2);
        Footprint {
            macs: k2 * ic * oc * o2,
            act_in_bytes: bits_to_bytes(ic * self.in_rows().pow(2) * self.act_bits as u64),
            wgt_bytes: bits_to_bytes(k2 * ic * oc * self.wgt_bits as u64),
            out_elems: oc * o2,
        }
    }
}

/// Free-function form of [`OperatorDescriptor::encode`].
pub fn encode_operator(op: &OperatorDescriptor) -> [u32; 7] {
    op.encode()
}

/// Free-function form of [`OperatorDescriptor::footprint`].
pub fn operator_footprints(op: &OperatorDescriptor) -> Footprint {
    op.footprint()
}

/// An ordered, non-empty list of operators executed one after another.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SubnetDescriptor {
    operators: Vec<OperatorDescriptor>,
}

impl SubnetDescriptor {
    pub fn new(operators: Vec<OperatorDescriptor>) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::EmptySubnet);
        }
        Ok(SubnetDescriptor { operators })
    }

    pub fn operators(&self) -> &[OperatorDescriptor] {
        &self.operators
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }
}

#[derive(Deserialize)]
struct RawWorkload {
    operators: Vec<serde_json::Value>,
}

/// Parse a workload document of the form `{"operators": [{...}, ...]}`.
pub fn load_subnet(text: &str) -> Result<SubnetDescriptor> {
    let raw: RawWorkload = serde_json::from_str(text)?;
    if raw.operators.is_empty() {
        return Err(Error::EmptySubnet);
    }
    let ops = raw
        .operators
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_operator_value(i, v))
        .collect::<Result<Vec<_>>>()?;
    SubnetDescriptor::new(ops)
}

fn parse_operator_value(index: usize, v: serde_json::Value) -> Result<OperatorDescriptor> {
    const FIELDS: [&str; 7] = [
        "kernel",
        "stride",
        "out_rows",
        "in_channels",
        "out_channels",
        "act_bits",
        "wgt_bits",
    ];
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse(format!("operator {index}: expected an object")))?;
    let mut f = [0u32; 7];
    for (slot, name) in f.iter_mut().zip(FIELDS) {
        let field = obj.get(name).ok_or_else(|| Error::InvalidOperator {
            index,
            field: name,
            reason: "missing".into(),
        })?;
        let n = field
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| Error::InvalidOperator {
                index,
                field: name,
                reason: format!("expected a non-negative integer, got {field}"),
            })?;
        *slot = n;
    }
    if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(Error::Parse(format!("operator {index}: unknown field {extra}")));
    }
    OperatorDescriptor::new_at(index, f)
}

/// Serialize a subnet in the workload document format.
pub fn subnet_to_document(subnet: &SubnetDescriptor) -> String {
    serde_json::to_string_pretty(subnet).expect("subnet serializes")
}
