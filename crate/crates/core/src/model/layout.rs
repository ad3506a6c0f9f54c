//! Placement of every decision variable inside the stacked vector
//! `x = [v_{p₁} | … | v_{p_P} | V_{c₁} | … | V_{c_C} | E[Π]]`.
//!
//! Per producer the inner order is `[V | F | O | W]`: electricity volumes
//! (per contract class), fuel positions (fuel-major, one length-N run per
//! fuel), emission positions (length N), production (delivery-major, plants
//! in canonical order within a delivery). Consumers hold volumes only, and
//! the final slice is the discounted expected electricity price per class.
//!
//! When transaction costs are active every volume variable is split into a
//! buy/sell pair `V = V⁺ - V⁻`, doubling the volume slice.

use super::grid::ContractGrid;
use super::market::MarketInstance;
use crate::extensions::BlockContract;

/// Equivalence classes of contracts created by block-contract merges. Every
/// contract in a class shares one traded-volume variable per player and one
/// price variable. Identity classes (one contract each) are the default.
#[derive(Debug, Clone)]
pub struct ContractClasses {
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ContractClasses {
    pub fn identity(n: usize) -> Self {
        Self {
            class_of: (0..n).collect(),
            members: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Build classes from block contracts. Each (block, trading time) pair
    /// merges the covered contracts into one class. Fails when a trading
    /// time is not common to every covered delivery, or when two blocks
    /// claim the same contract.
    pub fn from_blocks(grid: &ContractGrid, blocks: &[BlockContract]) -> Result<Self, String> {
        let n = grid.n_contracts();
        let mut group_of: Vec<Option<usize>> = vec![None; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (b, block) in blocks.iter().enumerate() {
            if block.deliveries.is_empty() {
                return Err(format!("block {b}: no deliveries covered"));
            }
            if block.trading_times.is_empty() {
                return Err(format!("block {b}: no trading times"));
            }
            let mut sorted = block.deliveries.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != block.deliveries.len() {
                return Err(format!("block {b}: duplicate deliveries"));
            }
            for &t in &block.trading_times {
                let mut contracts = Vec::with_capacity(sorted.len());
                for &j in &sorted {
                    if j >= grid.n_deliveries() {
                        return Err(format!("block {b}: delivery index {j} out of range"));
                    }
                    let Some(i) = grid.ladder(j).iter().position(|&ti| ti == t) else {
                        return Err(format!(
                            "block {b}: trading time {t} not available for delivery {j}"
                        ));
                    };
                    contracts.push(grid.flatten(j, i));
                }
                let gid = groups.len();
                for &c in &contracts {
                    if group_of[c].is_some() {
                        let (j, i) = grid.unflatten(c);
                        return Err(format!(
                            "block {b}: contract (delivery {j}, trading {i}) already covered by another block"
                        ));
                    }
                    group_of[c] = Some(gid);
                }
                groups.push(contracts);
            }
        }

        // Compact class ids in order of first appearance along the flat index.
        let mut class_of = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for c in 0..n {
            if class_of[c] != usize::MAX {
                continue;
            }
            let id = members.len();
            match group_of[c] {
                Some(g) => {
                    for &m in &groups[g] {
                        class_of[m] = id;
                    }
                    members.push(groups[g].clone());
                }
                None => {
                    class_of[c] = id;
                    members.push(vec![c]);
                }
            }
        }
        Ok(Self { class_of, members })
    }

    pub fn n_contracts(&self) -> usize {
        self.class_of.len()
    }

    pub fn n_classes(&self) -> usize {
        self.members.len()
    }

    pub fn class_of(&self, contract: usize) -> usize {
        self.class_of[contract]
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn is_identity(&self) -> bool {
        self.n_classes() == self.n_contracts()
    }
}

/// Which player a slice belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlayerRef {
    Producer(usize),
    Consumer(usize),
}

/// Widths of the four inner blocks of one player's variable slice.
#[derive(Debug, Clone, Copy)]
pub struct PlayerDims {
    pub n_vol: usize,
    pub n_fuel: usize,
    pub n_em: usize,
    pub n_prod: usize,
}

impl PlayerDims {
    pub fn total(&self) -> usize {
        self.n_vol + self.n_fuel + self.n_em + self.n_prod
    }
}

/// One player's contiguous slice of the stacked vector.
#[derive(Debug, Clone, Copy)]
pub struct PlayerSlice {
    pub player: PlayerRef,
    pub offset: usize,
    pub dims: PlayerDims,
}

impl PlayerSlice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dims.total()
    }

    /// Local index of the long volume variable of `class` (the net variable
    /// when volumes are unsplit).
    pub fn vol_plus_local(&self, class: usize) -> usize {
        class
    }

    /// Local index of the short volume variable; only valid when split.
    pub fn vol_minus_local(&self, n_classes: usize, class: usize) -> usize {
        n_classes + class
    }

    pub fn fuel_local(&self, n_contracts: usize, fuel: usize, contract: usize) -> usize {
        self.dims.n_vol + fuel * n_contracts + contract
    }

    pub fn em_local(&self, contract: usize) -> usize {
        self.dims.n_vol + self.dims.n_fuel + contract
    }

    /// Local index of production of the `plant_pos`-th plant (canonical
    /// order) at delivery `j`.
    pub fn prod_local(&self, n_plants: usize, j: usize, plant_pos: usize) -> usize {
        self.dims.n_vol + self.dims.n_fuel + self.dims.n_em + j * n_plants + plant_pos
    }
}

/// Full map of the stacked vector: player slices in producer-then-consumer
/// order, followed by the price slice.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub players: Vec<PlayerSlice>,
    pub classes: ContractClasses,
    pub split_volumes: bool,
    pub price_offset: usize,
    pub dim: usize,
    pub n_producers: usize,
}

impl VariableLayout {
    pub fn for_market(market: &MarketInstance) -> Result<Self, String> {
        let classes = market.contract_classes()?;
        let split = market.cost_spec.is_some();
        Ok(Self::build(market, classes, split))
    }

    fn build(market: &MarketInstance, classes: ContractClasses, split_volumes: bool) -> Self {
        let n = market.grid.n_contracts();
        let n_j = market.grid.n_deliveries();
        let k = classes.n_classes();
        let n_vol = if split_volumes { 2 * k } else { k };
        let mut players = Vec::with_capacity(market.n_players());
        let mut offset = 0usize;
        for (p, producer) in market.producers.iter().enumerate() {
            let dims = PlayerDims {
                n_vol,
                n_fuel: n * market.fuels.len(),
                n_em: n,
                n_prod: producer.plants.len() * n_j,
            };
            players.push(PlayerSlice {
                player: PlayerRef::Producer(p),
                offset,
                dims,
            });
            offset += dims.total();
        }
        for c in 0..market.consumers.len() {
            let dims = PlayerDims {
                n_vol,
                n_fuel: 0,
                n_em: 0,
                n_prod: 0,
            };
            players.push(PlayerSlice {
                player: PlayerRef::Consumer(c),
                offset,
                dims,
            });
            offset += dims.total();
        }
        let price_offset = offset;
        VariableLayout {
            players,
            classes,
            split_volumes,
            price_offset,
            dim: price_offset + k,
            n_producers: market.producers.len(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.n_classes()
    }

    pub fn price_index(&self, class: usize) -> usize {
        self.price_offset + class
    }

    pub fn slice(&self, player: PlayerRef) -> &PlayerSlice {
        match player {
            PlayerRef::Producer(p) => &self.players[p],
            PlayerRef::Consumer(c) => &self.players[self.n_producers + c],
        }
    }

    /// Net traded volume per class for one player, from the stacked vector.
    pub fn net_volumes(&self, x: &nalgebra::DVector<f64>, player: PlayerRef) -> Vec<f64> {
        let s = self.slice(player);
        let k = self.n_classes();
        (0..k)
            .map(|c| {
                let plus = x[s.offset + c];
                if self.split_volumes {
                    plus - x[s.offset + k + c]
                } else {
                    plus
                }
            })
            .collect()
    }

    /// Discounted expected price per class.
    pub fn prices(&self, x: &nalgebra::DVector<f64>) -> Vec<f64> {
        (0..self.n_classes()).map(|c| x[self.price_offset + c]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_classes_roundtrip() {
        let c = ContractClasses::identity(4);
        assert!(c.is_identity());
        for i in 0..4 {
            assert_eq!(c.class_of(i), i);
            assert_eq!(c.members(i), &[i]);
        }
    }
}
