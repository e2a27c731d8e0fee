//! Immutable data products keyed by `(label, cell)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::CellId;

macro_rules! token_type {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(name: &str) -> Result<Self, InvalidToken> {
                if crate::hierarchy::is_token(name) {
                    Ok($name(Arc::from(name)))
                } else {
                    Err(InvalidToken { what: $what, value: name.to_string() })
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = InvalidToken;
            fn try_from(s: String) -> Result<Self, InvalidToken> {
                $name::new(&s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = InvalidToken;
            fn try_from(s: &str) -> Result<Self, InvalidToken> {
                $name::new(s)
            }
        }

        impl From<$name> for String {
            fn from(l: $name) -> String {
                l.0.to_string()
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{value}` is not a valid {what}")]
pub struct InvalidToken {
    pub what: &'static str,
    pub value: String,
}

token_type!(
    /// Name of a data product, e.g. `GoodHits`.
    ProductLabel,
    "product label"
);

token_type!(
    /// Names the concrete type of a payload, e.g. `int` or `f64_list`.
    TypeTag,
    "type tag"
);

/// Provenance recorded for products that enter through the dataset source.
pub const SOURCE_PROVENANCE: &str = "source";

/// An immutable, labeled value bound to exactly one cell.
///
/// The payload is opaque to the engine: it is moved and shared but never
/// inspected.
#[derive(Debug, Clone, PartialEq)]
pub struct DataProduct<P> {
    pub label: ProductLabel,
    pub cell: CellId,
    pub type_tag: TypeTag,
    pub value: Arc<P>,
    pub provenance: Arc<str>,
    pub temporary: bool,
}

impl<P> DataProduct<P> {
    pub fn new(label: ProductLabel, cell: CellId, type_tag: TypeTag, value: P) -> Self {
        DataProduct {
            label,
            cell,
            type_tag,
            value: Arc::new(value),
            provenance: Arc::from(SOURCE_PROVENANCE),
            temporary: false,
        }
    }

    pub fn with_provenance(mut self, provenance: &str) -> Self {
        self.provenance = Arc::from(provenance);
        self
    }

    pub fn with_temporary(mut self, temporary: bool) -> Self {
        self.temporary = temporary;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("product `{label}` already exists at {cell}")]
    DuplicateProduct { label: String, cell: String },
    #[error("cell {0} is closed")]
    CellClosed(String),
    #[error("cell {0} is unknown")]
    CellUnknown(String),
    #[error("cell {0} is already open")]
    CellExists(String),
}

#[derive(Debug)]
struct CellSlot<P> {
    closed: bool,
    products: BTreeMap<ProductLabel, Arc<DataProduct<P>>>,
}

/// Thread-safe product store with per-cell retirement.
///
/// Cells must be opened before products can be put into them. Closing a
/// cell forbids further puts; retiring it drains its products and forgets
/// the cell.
#[derive(Debug)]
pub struct ProductStore<P> {
    cells: RwLock<HashMap<CellId, CellSlot<P>>>,
}

impl<P> Default for ProductStore<P> {
    fn default() -> Self {
        ProductStore {
            cells: RwLock::new(HashMap::new()),
        }
    }
}

impl<P> ProductStore<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_cell(&self, cell: &CellId) -> Result<(), StoreError> {
        let mut cells = self.cells.write().unwrap();
        if cells.contains_key(cell) {
            return Err(StoreError::CellExists(cell.to_string()));
        }
        cells.insert(
            cell.clone(),
            CellSlot {
                closed: false,
                products: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn close_cell(&self, cell: &CellId) -> Result<(), StoreError> {
        let mut cells = self.cells.write().unwrap();
        let slot = cells
            .get_mut(cell)
            .ok_or_else(|| StoreError::CellUnknown(cell.to_string()))?;
        slot.closed = true;
        Ok(())
    }

    pub fn put(&self, product: DataProduct<P>) -> Result<Arc<DataProduct<P>>, StoreError> {
        self.put_shared(Arc::new(product))
    }

    pub fn put_shared(&self, product: Arc<DataProduct<P>>) -> Result<Arc<DataProduct<P>>, StoreError> {
        let mut cells = self.cells.write().unwrap();
        let slot = cells
            .get_mut(&product.cell)
            .ok_or_else(|| StoreError::CellUnknown(product.cell.to_string()))?;
        if slot.closed {
            return Err(StoreError::CellClosed(product.cell.to_string()));
        }
        if slot.products.contains_key(&product.label) {
            return Err(StoreError::DuplicateProduct {
                label: product.label.to_string(),
                cell: product.cell.to_string(),
            });
        }
        slot.products.insert(product.label.clone(), Arc::clone(&product));
        Ok(product)
    }

    /// Exact-cell lookup.
    pub fn get(&self, label: &str, cell: &CellId) -> Option<Arc<DataProduct<P>>> {
        let cells = self.cells.read().unwrap();
        cells.get(cell)?.products.get(label).cloned()
    }

    /// Looks `label` up at the ancestor of `at` on `declared_level`.
    pub fn resolve(&self, label: &str, declared_level: &str, at: &CellId) -> Option<Arc<DataProduct<P>>> {
        let cell = at.ancestor(declared_level)?;
        self.get(label, &cell)
    }

    pub fn contains_cell(&self, cell: &CellId) -> bool {
        self.cells.read().unwrap().contains_key(cell)
    }

    /// Removes the cell and returns its non-temporary products, ordered by label.
    pub fn retire_cell(&self, cell: &CellId) -> Result<Vec<Arc<DataProduct<P>>>, StoreError> {
        let mut cells = self.cells.write().unwrap();
        let slot = cells
            .remove(cell)
            .ok_or_else(|| StoreError::CellUnknown(cell.to_string()))?;
        Ok(slot.products.into_values().filter(|p| !p.temporary).collect())
    }

    pub fn open_cell_count(&self) -> usize {
        self.cells.read().unwrap().len()
    }
}
