use msm_core::grid::SubdomainPartition;
use msm_core::Grid;

#[test]
fn partition_matches_golden_file() {
    let part = SubdomainPartition::new(Grid::new(8).unwrap(), 2, 2, 1).unwrap();
    let golden = include_str!("golden/partition_8x8_2x2_h1.txt");
    assert_eq!(part.describe(), golden);
    assert_eq!(part.band_cells().count(), 28);
}
