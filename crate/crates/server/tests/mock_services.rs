use std::sync::Arc;

use image::{Rgb, RgbImage};
use synoe_core::imaging::{decode_png, encode_png};
use synoe_core::svc::http::{HttpDetector, HttpInpainter};
use synoe_core::svc::mock::{prompt_color, MockDetector, MockInpainter};
use synoe_core::svc::{DetectRequest, Detector, InpaintRequest, Inpainter, ServiceError};
use synoe_server::{mock_services, spawn};

fn gray(side: u32) -> Vec<u8> {
    encode_png(&RgbImage::from_pixel(side, side, Rgb([90, 90, 90]))).unwrap()
}

fn server() -> synoe_server::RunningServer {
    let router = mock_services::router(Arc::new(MockInpainter::new(3)), Arc::new(MockDetector::analyzing()));
    spawn(router, "127.0.0.1:0".parse().unwrap()).unwrap()
}

#[test]
fn http_clients_match_in_process_backends() {
    let srv = server();
    let req = InpaintRequest { request_id: "1-0".into(), image_crop: gray(64), prompt: "penguin".into(), crop_side: 64 };
    let local = MockInpainter::new(3).inpaint(&req).unwrap();
    let remote = HttpInpainter::new(&srv.url()).inpaint(&req).unwrap();
    assert_eq!(decode_png(&local).unwrap(), decode_png(&remote).unwrap());

    let det = DetectRequest {
        request_id: "1-0/refine".into(),
        crop_id: Some("1-0".into()),
        image_crop: remote,
        prompt: "penguin".into(),
        box_threshold: 0.35,
        text_threshold: 0.25,
    };
    let local = MockDetector::analyzing().detect(&det).unwrap();
    let remote = HttpDetector::new(&srv.url()).detect(&det).unwrap();
    assert_eq!(local, remote);
}

#[test]
fn stamp_color_survives_the_round_trip() {
    let srv = server();
    let req = InpaintRequest { request_id: "r".into(), image_crop: gray(40), prompt: "kangaroo".into(), crop_side: 40 };
    let out = decode_png(&HttpInpainter::new(&srv.url()).inpaint(&req).unwrap()).unwrap();
    let target = prompt_color("kangaroo");
    let stamped = out.pixels().filter(|p| p.0 == target).count();
    // Either the stamp is present or the mock chose a non-stamping outcome; both keep the gray frame.
    assert!(stamped == 0 || stamped >= 12 * 12);
    assert_eq!(out.get_pixel(0, 0).0, [90, 90, 90]);
}

#[test]
fn malformed_payloads_get_error_replies() {
    let srv = server();
    let req = InpaintRequest { request_id: "bad".into(), image_crop: b"not a png".to_vec(), prompt: "x".into(), crop_side: 8 };
    match HttpInpainter::new(&srv.url()).inpaint(&req) {
        Err(ServiceError::Service { status, request_id, .. }) => {
            assert_eq!(status, 400);
            assert_eq!(request_id, "bad");
        }
        other => panic!("unexpected {other:?}"),
    }

    let resp = ureq::post(&format!("{}/v1/detect", srv.url()))
        .config()
        .http_status_as_error(false)
        .build()
        .send("{\"request_id\": 5}")
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}
