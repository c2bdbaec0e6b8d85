use gridmc::channel_plan::{default_plan, solve_n_queens, verify_plan, ChannelId, ChannelPlan};
use gridmc::grid_map::GridCoord;

const GOLDEN: &str = include_str!("data/golden_plan_18x6.txt");
const SHIFTED: &str = include_str!("data/shifted_plan_6x6.txt");

fn numbers(plan: &ChannelPlan) -> Vec<Vec<u16>> {
    (0..plan.rows())
        .map(|r| plan.row(r).iter().map(|c| c.number()).collect())
        .collect()
}

/// Latin per row, Latin per column inside each 6-row block, and no equal
/// pair at Chebyshev distance 1 with rows wrapping.
fn constraints_hold(cells: &[Vec<u16>]) -> bool {
    let rows = cells.len();
    let distinct = |v: Vec<u16>| {
        let mut s = v.clone();
        s.sort_unstable();
        s.dedup();
        s.len() == v.len()
    };
    let rows_ok = cells.iter().all(|r| distinct(r.clone()));
    let cols_ok = (0..rows / 6).all(|b| (0..6).all(|c| distinct((0..6).map(|i| cells[b * 6 + i][c]).collect())));
    let mut adj_ok = true;
    for r in 0..rows {
        for c in 0..6 {
            for dr in [rows - 1, 0, 1] {
                for dc in [-1i32, 0, 1] {
                    let (rr, cc) = ((r + dr) % rows, c as i32 + dc);
                    if (dr, dc) == (0, 0) || !(0..6).contains(&cc) {
                        continue;
                    }
                    adj_ok &= cells[rr][cc as usize] != cells[r][c];
                }
            }
        }
    }
    rows_ok && cols_ok && adj_ok
}

#[test]
fn golden_plan_is_frozen() {
    let golden = ChannelPlan::from_text(GOLDEN).unwrap();
    assert_eq!(default_plan(18).unwrap(), golden);
    assert_eq!(golden.to_text(), GOLDEN);
    assert!(constraints_hold(&numbers(&golden)));
    // 6-row period
    for c in 0..6 {
        assert_eq!(golden.channel_of(GridCoord::new(6, c)), golden.channel_of(GridCoord::new(0, c)));
    }
    assert!(golden.channel_of(GridCoord::new(18, 0)).is_err());
}

#[test]
fn golden_plan_block_starts_from_queens_seed() {
    let golden = ChannelPlan::from_text(GOLDEN).unwrap();
    let q = solve_n_queens(6).unwrap();
    assert_eq!(q.cols, vec![1, 3, 5, 0, 2, 4]);
    for (r, &c) in q.cols.iter().enumerate() {
        assert_eq!(golden.at(r, c), ChannelId::SCHS[0]);
    }
}

#[test]
fn shifted_square_passes_checks() {
    let plan = ChannelPlan::from_text(SHIFTED).unwrap();
    assert!(constraints_hold(&numbers(&plan)));
    let rep = verify_plan(&plan);
    assert!(rep.latin_rows && rep.latin_cols && rep.seam_ok);
    assert!(rep.per_channel_counts.values().all(|&n| n == 6));
    assert_eq!(rep.min_same_channel_chebyshev, Some(2));
    assert_eq!(plan.channel_of(GridCoord::new(0, 0)).unwrap(), ChannelId::SCHS[0]);
}

#[test]
fn broken_plans_are_caught() {
    let constant = ChannelPlan::from_cells(6, 6, vec![ChannelId::SCHS[0]; 36]).unwrap();
    let rep = verify_plan(&constant);
    assert!(!rep.latin_rows);
    assert_eq!(rep.min_same_channel_chebyshev, Some(1));
    // swapping two cells of the golden plan breaks the row or adjacency rules
    let mut cells = numbers(&ChannelPlan::from_text(GOLDEN).unwrap());
    cells[0].swap(0, 1);
    assert!(!constraints_hold(&cells));
}
