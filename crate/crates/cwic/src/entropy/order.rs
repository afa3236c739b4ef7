//! Symbol coding orders over a channels × height × width cuboid.
//!
//! Raster order visits width fastest, then height, then channels.  The
//! inclined schedule groups positions by the plane index k+i+j; every
//! position in plane t has its full causal context inside planes before t,
//! so one model evaluation per plane serves all of its symbols.

/// Positions (k, i, j) in raster order: j fastest, then i, then k.
pub fn raster_order(channels: usize, height: usize, width: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(channels * height * width);
    for k in 0..channels {
        for i in 0..height {
            for j in 0..width {
                out.push((k, i, j));
            }
        }
    }
    out
}

/// Inclined planes: plane t holds every (k, i, j) with k+i+j = t, for
/// t = 0 ..= channels+height+width-3.  Within a plane, positions are listed
/// with k ascending and i ascending; j is then determined.  This in-plane
/// order is the canonical coding order and must match on both coder sides.
pub fn inclined_planes(
    channels: usize,
    height: usize,
    width: usize,
) -> Vec<Vec<(usize, usize, usize)>> {
    let num_planes = channels + height + width - 2;
    let mut planes = vec![Vec::new(); num_planes];
    for t in 0..num_planes {
        for k in 0..channels.min(t + 1) {
            let rest = t - k;
            for i in 0..height.min(rest + 1) {
                let j = rest - i;
                if j < width {
                    planes[t].push((k, i, j));
                }
            }
        }
    }
    planes
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn raster_single_row() {
        assert_eq!(raster_order(1, 1, 3), vec![(0, 0, 0), (0, 0, 1), (0, 0, 2)]);
    }

    #[test]
    fn raster_cube_order() {
        let order = raster_order(2, 2, 2);
        assert_eq!(order.len(), 8);
        assert_eq!(order[4], (1, 0, 0));
        assert_eq!(order[0], (0, 0, 0));
        assert_eq!(order[7], (1, 1, 1));
    }

    #[test]
    fn raster_is_a_bijection() {
        let order = raster_order(3, 4, 5);
        assert_eq!(order.len(), 60);
        let unique: HashSet<_> = order.iter().collect();
        assert_eq!(unique.len(), 60);
    }

    #[test]
    fn inclined_cube_plane_sizes() {
        let planes = inclined_planes(2, 2, 2);
        let sizes: Vec<usize> = planes.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 3, 3, 1]);
    }

    #[test]
    fn inclined_single_position() {
        let planes = inclined_planes(1, 1, 1);
        assert_eq!(planes, vec![vec![(0, 0, 0)]]);
    }

    #[test]
    fn inclined_planes_partition_all_positions() {
        let (n, h, w) = (3, 4, 5);
        let planes = inclined_planes(n, h, w);
        assert_eq!(planes.len(), n + h + w - 2);
        let mut seen = HashSet::new();
        for (t, plane) in planes.iter().enumerate() {
            for &(k, i, j) in plane {
                assert_eq!(k + i + j, t);
                assert!(seen.insert((k, i, j)), "duplicate position");
            }
        }
        assert_eq!(seen.len(), n * h * w);
    }

    #[test]
    fn inclined_in_plane_order_is_channel_then_row() {
        let planes = inclined_planes(3, 3, 3);
        assert_eq!(planes[2], vec![
            (0, 0, 2),
            (0, 1, 1),
            (0, 2, 0),
            (1, 0, 1),
            (1, 1, 0),
            (2, 0, 0),
        ]);
    }
}
