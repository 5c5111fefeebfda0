//! The three variable blocks every agent carries: dual `θ`, upper `x`, lower `y`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Theta,
    X,
    Y,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Theta, Block::X, Block::Y];
}

/// One value per variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Triple<V> {
    pub theta: V,
    pub x: V,
    pub y: V,
}

impl<V> Triple<V> {
    pub fn new(theta: V, x: V, y: V) -> Self {
        Self { theta, x, y }
    }

    pub fn splat(v: V) -> Self
    where
        V: Clone,
    {
        Self {
            theta: v.clone(),
            x: v.clone(),
            y: v,
        }
    }

    pub fn get(&self, b: Block) -> &V {
        match b {
            Block::Theta => &self.theta,
            Block::X => &self.x,
            Block::Y => &self.y,
        }
    }

    pub fn get_mut(&mut self, b: Block) -> &mut V {
        match b {
            Block::Theta => &mut self.theta,
            Block::X => &mut self.x,
            Block::Y => &mut self.y,
        }
    }

    pub fn map<W>(self, mut f: impl FnMut(Block, V) -> W) -> Triple<W> {
        Triple {
            theta: f(Block::Theta, self.theta),
            x: f(Block::X, self.x),
            y: f(Block::Y, self.y),
        }
    }

    pub fn as_ref(&self) -> Triple<&V> {
        Triple {
            theta: &self.theta,
            x: &self.x,
            y: &self.y,
        }
    }

    pub fn try_map<W, E>(self, mut f: impl FnMut(Block, V) -> Result<W, E>) -> Result<Triple<W>, E> {
        Ok(Triple {
            theta: f(Block::Theta, self.theta)?,
            x: f(Block::X, self.x)?,
            y: f(Block::Y, self.y)?,
        })
    }
}
