// Scratch harness used during development to pin reference counts.
use videokit::models::*;

fn main() {
    let t0 = std::time::Instant::now();
    let i3d = create_resnet(&ResNetConfig {
        variant: ResNetVariant::I3d,
        depth: 50,
        ..Default::default()
    })
    .unwrap();
    println!(
        "i3d_r50 params = {} flops@8x256 = {}",
        count_params(&i3d),
        count_flops(&i3d, &TraceInput::single(vec![1, 3, 8, 256, 256])).unwrap()
    );

    let c2d = create_resnet(&ResNetConfig {
        variant: ResNetVariant::C2d,
        depth: 50,
        ..Default::default()
    })
    .unwrap();
    println!(
        "c2d_r50 params = {} flops@8x256 = {}",
        count_params(&c2d),
        count_flops(&c2d, &TraceInput::single(vec![1, 3, 8, 256, 256])).unwrap()
    );

    let slow = create_resnet(&ResNetConfig {
        variant: ResNetVariant::Slow,
        depth: 50,
        ..Default::default()
    })
    .unwrap();
    println!(
        "slow_r50 params = {} flops@8x256 = {}",
        count_params(&slow),
        count_flops(&slow, &TraceInput::single(vec![1, 3, 8, 256, 256])).unwrap()
    );

    let sf50 = create_slowfast(&SlowFastConfig::default()).unwrap();
    println!(
        "slowfast_r50 params = {} flops@(8,32)x256 = {}",
        count_params(&sf50),
        count_flops(
            &sf50,
            &TraceInput::pathways(vec![vec![1, 3, 8, 256, 256], vec![1, 3, 32, 256, 256]])
        )
        .unwrap()
    );

    let sf101 = create_slowfast(&SlowFastConfig::r101_16x8()).unwrap();
    println!(
        "slowfast_r101_16x8 params = {} flops@(16,64)x256 = {}",
        count_params(&sf101),
        count_flops(
            &sf101,
            &TraceInput::pathways(vec![vec![1, 3, 16, 256, 256], vec![1, 3, 64, 256, 256]])
        )
        .unwrap()
    );

    for (name, variant, frames, crop) in [
        ("x3d_m", X3dVariant::M, 16, 256),
        ("x3d_l", X3dVariant::L, 16, 312),
        ("x3d_l", X3dVariant::L, 16, 356),
        ("x3d_l", X3dVariant::L, 16, 376),
        ("x3d_xs", X3dVariant::Xs, 4, 182),
    ] {
        let m = create_x3d(&X3dConfig {
            variant,
            ..Default::default()
        })
        .unwrap();
        println!(
            "{name} params = {} flops@{frames}x{crop} = {}",
            count_params(&m),
            count_flops(&m, &TraceInput::single(vec![1, 3, frames, crop, crop])).unwrap()
        );
    }

    let slow_det = create_resnet_detection(
        &ResNetConfig {
            variant: ResNetVariant::Slow,
            depth: 50,
            ..Default::default()
        },
        &Default::default(),
    )
    .unwrap();
    println!(
        "slow_r50_detection params = {} flops@4x224+1box = {}",
        count_params(&slow_det),
        count_flops(
            &slow_det,
            &TraceInput::single(vec![1, 3, 4, 224, 224]).with_boxes(1)
        )
        .unwrap()
    );

    let sf_det = create_slowfast_detection(&SlowFastConfig::default(), &Default::default()).unwrap();
    println!(
        "slowfast_r50_detection params = {} flops@(8,32)x224+1box = {}",
        count_params(&sf_det),
        count_flops(
            &sf_det,
            &TraceInput::pathways(vec![vec![1, 3, 8, 224, 224], vec![1, 3, 32, 224, 224]])
                .with_boxes(1)
        )
        .unwrap()
    );

    let ac = create_acoustic_resnet(&AcousticResNetConfig::default()).unwrap();
    println!(
        "acoustic_r50 params = {} flops@(128,80) = {}",
        count_params(&ac),
        count_flops(&ac, &TraceInput::single(vec![1, 128, 80])).unwrap()
    );
    println!("elapsed: {:?}", t0.elapsed());
}
