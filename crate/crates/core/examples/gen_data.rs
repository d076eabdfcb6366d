//! Regenerates the bundled files under `data/` from the deterministic
//! generators in `loadflow::synth`:
//!
//! ```text
//! cargo run -p loadflow --example gen_data
//! ```

use std::fs;
use std::path::PathBuf;

use loadflow::io;
use loadflow::loads::{BigParams, LoadModel, ModelKind, PqParams, YParams};
use loadflow::network::{Branch, Bus, BusKind, CostPoly, Generator, GridCase, LoadEntry};
use loadflow::synth;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn write_json(name: &str, value: &impl serde::Serialize) {
    let path = data_dir().join(name);
    let mut text = serde_json::to_string_pretty(value).unwrap();
    text.push('\n');
    fs::write(&path, text).unwrap();
    println!("wrote {}", path.display());
}

fn two_bus(model: LoadModel) -> GridCase {
    GridCase {
        buses: vec![
            Bus {
                id: 1,
                kind: BusKind::Slack,
                v_min: 0.94,
                v_max: 1.06,
            },
            Bus {
                id: 2,
                kind: BusKind::Load,
                v_min: 0.85,
                v_max: 1.15,
            },
        ],
        branches: vec![Branch {
            from: 1,
            to: 2,
            r: 0.02,
            x: 0.08,
            b_sh: 0.0,
        }],
        generators: vec![Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 5.0,
            q_min: -5.0,
            q_max: 5.0,
            cost: CostPoly(0.0, 1.0, 0.0),
        }],
        loads: vec![LoadEntry { bus: 2, model }],
    }
}

fn main() {
    fs::create_dir_all(data_dir()).unwrap();

    write_json(
        "case2_pq.json",
        &two_bus(LoadModel::Pq(PqParams { p: 0.9, q: 0.25 })),
    );
    write_json(
        "case2_y.json",
        &two_bus(LoadModel::Y(YParams { g: 0.85, b: -0.2 })),
    );
    write_json(
        "case2_big.json",
        &two_bus(LoadModel::Big(BigParams {
            alpha_r: 0.65358,
            alpha_i: -0.13531,
            g_b: 0.43166,
            b_b: -0.19968,
        })),
    );

    write_json("case3_pq.json", synth::three_bus_case(ModelKind::Pq).case());
    write_json("case3_y.json", synth::three_bus_case(ModelKind::Y).case());

    // five-bus reconstruction carrying the first-segment constant-power
    // loads, ready for standalone pf/opf runs
    let mut five = synth::five_bus_case().case().clone();
    five.loads = synth::seg1_pq()
        .into_iter()
        .map(|(bus, model)| LoadEntry { bus, model })
        .collect();
    write_json("case5.json", &five);

    let seg = synth::segmented_reconstruction();
    let path = data_dir().join("segmented5.json");
    fs::write(&path, io::segmented_to_json(&seg)).unwrap();
    println!("wrote {}", path.display());

    let series = synth::two_day_series(2024);
    let path = data_dir().join("two_day_bus4.csv");
    fs::write(&path, io::measurements_to_csv(&series)).unwrap();
    println!("wrote {}", path.display());
}
