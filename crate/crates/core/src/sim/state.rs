use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ac::AcState;
use crate::config::BatteryOrder;
use crate::dc::DcState;

/// Full coupled state. Serialized as the 13 AC states followed by the DC
/// block (branch states present for the battery order, then `i_b`, `v_dc`,
/// `eta`, `zeta_i` and the five dead-time states).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub order: BatteryOrder,
    pub ac: AcState,
    pub dc: DcState,
}

impl SystemState {
    pub fn dim(order: BatteryOrder) -> usize {
        AcState::LEN + DcState::len(order)
    }

    pub fn labels(order: BatteryOrder) -> Vec<&'static str> {
        let mut labels = AcState::LABELS.to_vec();
        labels.extend(DcState::labels(order));
        labels
    }

    pub fn v_dc_index(order: BatteryOrder) -> usize {
        AcState::LEN + DcState::v_dc_index(order)
    }

    pub fn theta_index() -> usize {
        AcState::THETA_INDEX
    }

    pub fn from_slice(order: BatteryOrder, x: &[f64]) -> Self {
        debug_assert_eq!(x.len(), Self::dim(order));
        Self {
            order,
            ac: AcState::read_from(&x[..AcState::LEN]),
            dc: DcState::read_from(order, &x[AcState::LEN..]),
        }
    }

    pub fn write_to(&self, out: &mut [f64]) {
        self.ac.write_to(&mut out[..AcState::LEN]);
        self.dc.write_to(self.order, &mut out[AcState::LEN..]);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; Self::dim(self.order)];
        self.write_to(&mut v);
        v
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_vec())
    }
}
