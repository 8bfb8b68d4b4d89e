use crate::error::{Error, Result};

/// Sorts `class_ids` and assigns the first `⌈N/2⌉` to base, the rest to novel.
pub fn base_novel_split<T: Ord + Clone>(class_ids: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if class_ids.len() < 2 {
        return Err(Error::Data(format!(
            "base/novel split needs at least 2 classes, got {}",
            class_ids.len()
        )));
    }
    let mut sorted = class_ids.to_vec();
    sorted.sort();
    let novel = sorted.split_off(sorted.len().div_ceil(2));
    Ok((sorted, novel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ceiling_rule() {
        let (b, n) = base_novel_split(&(0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!((b.len(), n.len()), (5, 5));
        let (b, n) = base_novel_split(&[6, 0, 5, 1, 4, 2, 3]).unwrap();
        assert_eq!(b, vec![0, 1, 2, 3]);
        assert_eq!(n, vec![4, 5, 6]);
        assert!(matches!(base_novel_split(&[1]), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn partition_law(ids in proptest::collection::btree_set(0u32..1000, 2..40)) {
            let ids: Vec<u32> = ids.into_iter().rev().collect();
            let (b, n) = base_novel_split(&ids).unwrap();
            prop_assert_eq!(b.len() + n.len(), ids.len());
            prop_assert!(b.iter().all(|x| !n.contains(x)));
            let mut all = b.clone();
            all.extend(&n);
            let mut sorted = ids.clone();
            sorted.sort();
            prop_assert_eq!(all, sorted);
        }
    }
}
