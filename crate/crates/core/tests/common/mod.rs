#![allow(dead_code)]

use coxplore::accel::{AcceleratorConfig, Dataflow, ParamSpace};
use coxplore::costmodel::TilingPlan;
use coxplore::workload::{OperatorDescriptor, SubnetDescriptor};

pub const BIN: &str = env!("CARGO_BIN_EXE_coxplore");

pub fn table2_op() -> OperatorDescriptor {
    OperatorDescriptor::new(5, 1, 7, 552, 552, 8, 8).unwrap()
}

pub fn table2_accel() -> AcceleratorConfig {
    AcceleratorConfig {
        pe_x: 16,
        pe_y: 16,
        act_cache_kb: 384,
        wgt_cache_kb: 384,
        out_cache_kb: 384,
        dataflow: Dataflow::WS,
        loop_order: "BIOHW".parse().unwrap(),
    }
}

/// Table-2 tilings as (t_oc, t_ic, t_ow, t_oh): best row, case 1, case 0.
pub fn table2_tilings() -> [TilingPlan; 3] {
    [
        TilingPlan::new(16, 16, 1, 1).unwrap(),
        TilingPlan::new(128, 32, 2, 2).unwrap(),
        TilingPlan::new(512, 2, 4, 4).unwrap(),
    ]
}

/// A 22-operator mobile-style network with channels growing to 552.
pub fn synthetic_subnet() -> SubnetDescriptor {
    const CH: [u32; 23] = [
        16, 24, 24, 32, 32, 40, 40, 64, 64, 80, 80, 96, 96, 112, 112, 184, 184, 276, 276, 368, 368, 552, 552,
    ];
    const ROWS: [u32; 4] = [56, 28, 14, 7];
    const KERNELS: [u32; 4] = [3, 5, 1, 7];
    const BITS: [(u32, u32); 3] = [(8, 8), (4, 8), (4, 4)];
    let ops = (0..22)
        .map(|i| {
            let (a, w) = BITS[i % 3];
            OperatorDescriptor::new(KERNELS[i % 4], 1, ROWS[(i * 4) / 22], CH[i], CH[i + 1], a, w).unwrap()
        })
        .collect();
    SubnetDescriptor::new(ops).unwrap()
}

pub fn small_subnet() -> SubnetDescriptor {
    SubnetDescriptor::new(vec![
        OperatorDescriptor::new(3, 1, 14, 32, 64, 8, 8).unwrap(),
        OperatorDescriptor::new(1, 1, 14, 64, 64, 4, 4).unwrap(),
        OperatorDescriptor::new(5, 2, 7, 64, 128, 8, 4).unwrap(),
    ])
    .unwrap()
}

/// 2 x 2 PE sizes, one cache size, three dataflows, two loop orders.
pub fn reduced_space() -> ParamSpace {
    ParamSpace {
        pe_x: vec![8, 16],
        pe_y: vec![8, 16],
        act_cache_kb: vec![64],
        wgt_cache_kb: vec![64],
        out_cache_kb: vec![64],
        dataflow: Dataflow::ALL.to_vec(),
        loop_order: vec!["BIOHW".parse().unwrap(), "BOIHW".parse().unwrap()],
    }
}

pub const REDUCED_SPACE_JSON: &str = r#"{"pe_x":[8,16],"pe_y":[8,16],"act_cache_kb":[64],"wgt_cache_kb":[64],"out_cache_kb":[64],"dataflow":["WS","OS","RS"],"loop_order":["BIOHW","BOIHW"]}"#;

pub fn supernet_json() -> String {
    let op = |k: u32, ic: u32, oc: u32| {
        format!(r#"{{"kernel":{k},"stride":1,"out_rows":14,"in_channels":{ic},"out_channels":{oc},"act_bits":8,"wgt_bits":8}}"#)
    };
    let cand = |t: String, w: &str, a: &str| format!(r#"{{"template":{t},"beta_w":{w},"beta_a":{a}}}"#);
    let layer = |ic: u32, oc: u32, hot: usize| {
        let cands: Vec<String> = [1, 3, 5, 7, 1, 3, 5, 7]
            .iter()
            .map(|&k| cand(op(k, ic, oc), "[0.2,0.3,0.5]", "[0.5,0.3,0.2]"))
            .chain(std::iter::once(cand("null".into(), "[1,1,1]", "[1,1,1]")))
            .collect();
        let alpha: Vec<String> = (0..9).map(|i| if i == hot { "0.6".into() } else { "0.05".into() }).collect();
        format!(r#"{{"alpha":[{}],"candidates":[{}]}}"#, alpha.join(","), cands.join(","))
    };
    format!(r#"{{"layers":[{},{},{}]}}"#, layer(32, 64, 1), layer(64, 64, 8), layer(64, 128, 2))
}
