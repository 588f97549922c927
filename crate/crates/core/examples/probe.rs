use hbtk::linalg::generalized_eig;
use hbtk::systems::*;

fn main() {
    for variant in [ThreeDofVariant::SuperharmonicResonance, ThreeDofVariant::NoResonance] {
        let model = build_3dof(&ThreeDofSpec::new(variant)).unwrap();
        let (stuck, _) = model.stuck_modes().unwrap();
        let (free, _) = generalized_eig(&model.stiffness, &model.mass).unwrap();
        println!("{variant:?}");
        println!("  stuck: {:?}", stuck.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        println!(
            "  free:  {:?}",
            free.iter().map(|v| (v.max(0.0).sqrt() * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
