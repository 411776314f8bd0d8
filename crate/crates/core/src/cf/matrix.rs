use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ingest::Transaction;

/// How repeated behaviors on one (user, item) pair combine into a rating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Sum,
}

/// Sparse user x item ratings. Users and items are indexed in ascending id
/// order; only observed entries are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    users: Vec<String>,
    items: Vec<String>,
    item_categories: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    /// Per user: (item, rating), item-ascending.
    by_user: Vec<Vec<(usize, f64)>>,
    /// Per item: (user, rating), user-ascending.
    by_item: Vec<Vec<(usize, f64)>>,
}

impl RatingMatrix {
    /// Builds from explicit ids and `(user, item, rating)` triples. Later
    /// triples for the same cell overwrite earlier ones.
    pub fn from_entries(
        users: Vec<String>,
        items: Vec<String>,
        item_categories: Vec<String>,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        assert_eq!(items.len(), item_categories.len(), "one category per item");
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, i, r) in entries {
            assert!(
                u < users.len() && i < items.len(),
                "entry ({u}, {i}) out of bounds"
            );
            cells.insert((u, i), r);
        }
        let mut by_user = vec![Vec::new(); users.len()];
        let mut by_item = vec![Vec::new(); items.len()];
        for (&(u, i), &r) in &cells {
            by_user[u].push((i, r));
            by_item[i].push((u, r));
        }
        RatingMatrix {
            user_index: users
                .iter()
                .enumerate()
                .map(|(k, id)| (id.clone(), k))
                .collect(),
            item_index: items
                .iter()
                .enumerate()
                .map(|(k, id)| (id.clone(), k))
                .collect(),
            users,
            items,
            item_categories,
            by_user,
            by_item,
        }
    }

    /// Dense fixture constructor: `None` cells are unobserved. Ids are
    /// `u0..`, `i0..`; every item is in category `c0`.
    pub fn from_dense(rows: &[Vec<Option<f64>>]) -> Self {
        let n_items = rows.first().map_or(0, Vec::len);
        let entries = rows.iter().enumerate().flat_map(|(u, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(i, r)| r.map(|r| (u, i, r)))
        });
        RatingMatrix::from_entries(
            (0..rows.len()).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            vec!["c0".to_string(); n_items],
            entries.collect::<Vec<_>>(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_entries(&self) -> usize {
        self.by_user.iter().map(Vec::len).sum()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn item_categories(&self) -> &[String] {
        &self.item_categories
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_row(&self, u: usize) -> &[(usize, f64)] {
        &self.by_user[u]
    }

    pub fn item_column(&self, i: usize) -> &[(usize, f64)] {
        &self.by_item[i]
    }

    pub fn get(&self, u: usize, i: usize) -> Option<f64> {
        let row = &self.by_user[u];
        row.binary_search_by_key(&i, |&(j, _)| j)
            .ok()
            .map(|k| row[k].1)
    }

    /// All observed `(user, item, rating)` triples, user-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, r)| (u, i, r)))
    }

    pub fn sparsity(&self) -> f64 {
        let cells = self.n_users() * self.n_items();
        if cells == 0 {
            0.0
        } else {
            self.n_entries() as f64 / cells as f64
        }
    }
}

/// Rating of (u, i) is the largest behavior code u showed on i.
pub fn build_rating_matrix(transactions: &[Transaction]) -> RatingMatrix {
    build_rating_matrix_with(transactions, Aggregation::Max)
}

pub fn build_rating_matrix_with(
    transactions: &[Transaction],
    aggregation: Aggregation,
) -> RatingMatrix {
    let mut users: BTreeMap<&str, usize> = BTreeMap::new();
    let mut items: BTreeMap<&str, &str> = BTreeMap::new();
    for t in transactions {
        users.insert(&t.user_id, 0);
        items.entry(&t.item_id).or_insert(&t.category_id);
    }
    for (k, v) in users.values_mut().enumerate() {
        *v = k;
    }
    let item_pos: HashMap<&str, usize> = items.keys().enumerate().map(|(k, &id)| (id, k)).collect();

    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    for t in transactions {
        let key = (users[t.user_id.as_str()], item_pos[t.item_id.as_str()]);
        let code = f64::from(t.behavior.code());
        let cell = cells.entry(key).or_insert(0.0);
        *cell = match aggregation {
            Aggregation::Max => cell.max(code),
            Aggregation::Sum => *cell + code,
        };
    }
    RatingMatrix::from_entries(
        users.keys().map(|s| s.to_string()).collect(),
        items.keys().map(|s| s.to_string()).collect(),
        items.values().map(|s| s.to_string()).collect(),
        cells.into_iter().map(|((u, i), r)| (u, i, r)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{dataset_stats, BehaviorType::*, Hour};

    fn tx(u: &str, i: &str, b: crate::ingest::BehaviorType) -> Transaction {
        Transaction::new(u, i, "c", b, "2014-12-01 00".parse::<Hour>().unwrap())
    }

    #[test]
    fn max_aggregation() {
        let m = build_rating_matrix(&[
            tx("u", "i", Click),
            tx("u", "i", Payment),
            tx("u", "j", Collect),
        ]);
        assert_eq!(m.get(0, 0), Some(4.0));
        assert_eq!(m.get(0, 1), Some(2.0));
        let m =
            build_rating_matrix_with(&[tx("u", "i", Click), tx("u", "i", Cart)], Aggregation::Sum);
        assert_eq!(m.get(0, 0), Some(4.0));
    }

    #[test]
    fn reproduces_a_sparse_grid() {
        // A 5-user slice: single-digit ratings, blanks elsewhere.
        let grid: [(&str, [u8; 5]); 4] = [
            ("100019569", [0, 2, 4, 0, 1]),
            ("100009489", [3, 0, 2, 1, 3]),
            ("100003463", [0, 0, 4, 0, 0]),
            ("100004291", [0, 4, 1, 1, 4]),
        ];
        let users = [
            "100011562",
            "100024529",
            "100086267",
            "100637858",
            "100854241",
        ];
        let mut log = Vec::new();
        for (item, row) in &grid {
            for (u, &code) in row.iter().enumerate() {
                // lower codes first, so max-aggregation has something to discard
                for c in 1..=code {
                    log.push(tx(
                        users[u],
                        item,
                        crate::ingest::BehaviorType::from_code(c).unwrap(),
                    ));
                }
            }
        }
        let m = build_rating_matrix(&log);
        for (item, row) in &grid {
            let i = m.item_index(item).unwrap();
            for (u, &code) in row.iter().enumerate() {
                let u = m.user_index(users[u]).unwrap();
                let expect = (code > 0).then_some(f64::from(code));
                assert_eq!(m.get(u, i), expect);
            }
        }
        let u = m.user_index("100024529").unwrap();
        assert_eq!(m.get(u, m.item_index("100004291").unwrap()), Some(4.0));
        assert!((m.sparsity() - dataset_stats(&log).sparsity).abs() < 1e-15);
    }
}
