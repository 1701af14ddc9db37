//! Bundled example models.
//!
//! | name | d | laws | regime |
//! |------|---|------|--------|
//! | A | 1 | 0 ↦ .25, 2 ↦ .75 | supercritical, periodic |
//! | B | 1 | 0/1/2 ↦ .3/.4/.3 | critical |
//! | C | 2 | see `fixtures/model_c.json` | subcritical |
//! | D | 1 | 0/1/2 ↦ .2/.3/.5 | supercritical |
//! | E | 1 | 0/1 ↦ .5/.5 | subcritical, affine |

use crate::model::BranchingModel;

pub const MODEL_A_JSON: &str = include_str!("../fixtures/model_a.json");
pub const MODEL_B_JSON: &str = include_str!("../fixtures/model_b.json");
pub const MODEL_C_JSON: &str = include_str!("../fixtures/model_c.json");
pub const MODEL_D_JSON: &str = include_str!("../fixtures/model_d.json");
pub const MODEL_E_JSON: &str = include_str!("../fixtures/model_e.json");

fn load(text: &str) -> BranchingModel {
    BranchingModel::from_json(text).expect("bundled fixture is valid")
}

pub fn model_a() -> BranchingModel {
    load(MODEL_A_JSON)
}

pub fn model_b() -> BranchingModel {
    load(MODEL_B_JSON)
}

pub fn model_c() -> BranchingModel {
    load(MODEL_C_JSON)
}

pub fn model_d() -> BranchingModel {
    load(MODEL_D_JSON)
}

pub fn model_e() -> BranchingModel {
    load(MODEL_E_JSON)
}

/// Looks a fixture up by its letter (case-insensitive).
pub fn by_name(name: &str) -> Option<BranchingModel> {
    match name.to_ascii_uppercase().as_str() {
        "A" => Some(model_a()),
        "B" => Some(model_b()),
        "C" => Some(model_c()),
        "D" => Some(model_d()),
        "E" => Some(model_e()),
        _ => None,
    }
}
