use tcbench::dataio::{imbalance_rho, Split, SplitId};
use tcbench::episodes::EpisodeStream;
use tcbench::nets::{head_params, HeadKind, HeadSpec};

use crate::fixtures::dataset;

pub fn check() -> Result<String, String> {
    let mut failures = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    expect("head_params(200,4)=804", head_params(200, 4) == 804);
    expect("head_params(200,500)=100500", head_params(200, 500) == 100_500);
    expect("head_params(500,4)=2004", head_params(500, 4) == 2004);
    expect("linear HeadSpec agrees", HeadSpec::new(HeadKind::Linear, 4).param_count(200).ok() == Some(804));

    let rho1 = imbalance_rho([8200, 1300]).map_err(|e| e.to_string())?;
    let rho2 = imbalance_rho([1_000_000, 383]).map_err(|e| e.to_string())?;
    // Quoted to one decimal and to the nearest integer respectively.
    expect("rho(8200,1300)=6.3", format!("{rho1:.1}") == "6.3");
    expect("rho(1e6,383)~2611", format!("{rho2:.0}") == "2611");

    let stream = EpisodeStream { epochs: 200, episodes_per_epoch: 100, ways: 2, shots: 1, queries: 1, seed: 0 };
    let data = dataset(&[3, 3, 3], 1, 1, 0);
    let split = Split::of_classes(&data, &[0, 1, 2]);
    let drawn = stream.iter(&data, &split, SplitId::Train).map_err(|e| e.to_string())?.count();
    expect("episode_stream(200,100) has 20000 episodes", stream.len() == 20_000 && drawn == 20_000);

    if failures.is_empty() {
        Ok(format!("804, 100500, 2004; rho {rho1:.1} and {rho2:.0}; {drawn} streamed episodes"))
    } else {
        Err(failures.join("; "))
    }
}
