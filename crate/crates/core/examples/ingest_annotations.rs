//! Parses kitchen-style action annotations into vocabularies, a rule-less
//! ledger skeleton and segment metadata.

use stateact::ledger::ingest_annotations;

const CSV: &str = "\
uid,video_id,start_frame,stop_frame,verb,verb_class,noun,noun_class,all_nouns
0,P01_01,8,202,open,3,door,8,['door']
1,P01_01,262,370,take,0,cup,13,['cup']
2,P01_01,418,569,put,1,\"cup\",13,['cup']
3,P01_02,12,98,cut,7,onion,19,['onion']
4,P01_02,120,301,open,3,fridge,12,['fridge']
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ingested = ingest_annotations(CSV.as_bytes())?;
    let ledger = &ingested.ledger;
    println!("verbs:   {:?}", ledger.verbs.names());
    println!("nouns:   {:?}", ledger.nouns.names());
    println!("actions: {:?}", ledger.actions.names());
    for seg in &ingested.segments {
        println!(
            "{} [{}, {}] {}",
            seg.video_id,
            seg.start_frame,
            seg.stop_frame,
            ledger.actions.name(seg.label.action).unwrap_or("?")
        );
    }
    println!("\n{}", ledger.to_text());
    Ok(())
}
