//! Process-wide memo for immutable bases and projection matrices.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type Slot = Arc<dyn Any + Send + Sync>;
type Table = Mutex<HashMap<(TypeId, &'static str, [usize; 3]), Slot>>;

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

/// Returns the cached value for `(V, kind, key)`, building it on first use.
///
/// The lock is held while building, so concurrent first calls for the same
/// key all observe the one value that was inserted.
pub(crate) fn get_or_try_build<V, E>(
    kind: &'static str,
    key: [usize; 3],
    build: impl FnOnce() -> Result<V, E>,
) -> Result<Arc<V>, E>
where
    V: Send + Sync + 'static,
{
    let mut map = table().lock().unwrap_or_else(|e| e.into_inner());
    let id = (TypeId::of::<V>(), kind, key);
    if let Some(slot) = map.get(&id) {
        return Ok(slot.clone().downcast::<V>().expect("cache slot type"));
    }
    let value = Arc::new(build()?);
    map.insert(id, value.clone());
    Ok(value)
}
