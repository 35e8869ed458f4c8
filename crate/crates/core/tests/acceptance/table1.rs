/// Table of removal steps: (row label, [v1, v2, v3, v4, v5]).
pub const TABLE: [(&str, [u64; 5]); 61] = [
    ("0.ln2", [50, 50, 200, 200, 180]),
    ("1.ln2", [50, 50, 240, 220, 190]),
    ("2.ln2", [50, 50, 280, 240, 200]),
    ("3.ln2", [50, 50, 320, 260, 210]),
    ("4.ln2", [50, 50, 360, 280, 220]),
    ("5.ln2", [50, 50, 400, 300, 230]),
    ("6.ln2", [50, 50, 440, 320, 240]),
    ("7.ln2", [50, 50, 480, 340, 250]),
    ("8.ln2", [50, 50, 520, 360, 260]),
    ("9.ln2", [50, 50, 560, 380, 270]),
    ("10.ln2", [50, 50, 600, 400, 280]),
    ("11.ln2", [50, 50, 640, 420, 290]),
    ("0.ln1qk", [50, 100, 680, 440, 300]),
    ("1.ln1qk", [50, 120, 720, 460, 320]),
    ("2.ln1qk", [50, 140, 760, 480, 340]),
    ("3.ln1qk", [50, 160, 800, 500, 360]),
    ("4.ln1qk", [50, 180, 840, 520, 380]),
    ("5.ln1qk", [50, 200, 880, 540, 400]),
    ("6.ln1qk", [50, 220, 920, 560, 420]),
    ("7.ln1qk", [50, 240, 960, 580, 440]),
    ("8.ln1qk", [50, 260, 1000, 600, 460]),
    ("9.ln1qk", [50, 280, 1040, 620, 480]),
    ("10.ln1qk", [50, 300, 1080, 640, 500]),
    ("11.ln1qk", [50, 320, 1120, 660, 520]),
    ("0.ln1v", [50, 350, 1160, 680, 540]),
    ("1.ln1v", [50, 350, 1170, 710, 550]),
    ("2.ln1v", [50, 350, 1180, 740, 560]),
    ("3.ln1v", [50, 350, 1190, 770, 570]),
    ("4.ln1v", [50, 350, 1200, 800, 580]),
    ("5.ln1v", [50, 350, 1210, 830, 590]),
    ("6.ln1v", [50, 350, 1220, 860, 600]),
    ("7.ln1v", [50, 350, 1230, 890, 610]),
    ("8.ln1v", [50, 350, 1240, 920, 620]),
    ("9.ln1v", [50, 350, 1250, 950, 630]),
    ("10.ln1v", [50, 350, 1260, 980, 640]),
    ("11.ln1v", [50, 350, 1270, 1010, 650]),
    ("lnf", [300, 400, 1640, 1040, 660]),
    ("0.eot", [200, 500, 1740, 1060, 680]),
    ("1.eot", [200, 500, 1740, 1060, 700]),
    ("2.eot", [200, 500, 1740, 1060, 720]),
    ("3.eot", [200, 500, 1740, 1060, 740]),
    ("4.eot", [200, 500, 1740, 1060, 760]),
    ("5.eot", [200, 500, 1740, 1060, 780]),
    ("6.eot", [200, 500, 1740, 1060, 800]),
    ("7.eot", [200, 500, 1740, 1060, 820]),
    ("8.eot", [200, 500, 1740, 1060, 840]),
    ("9.eot", [200, 500, 1740, 1060, 860]),
    ("10.eot", [200, 500, 1740, 1060, 880]),
    ("11.eot", [200, 500, 1740, 1060, 900]),
    ("0.bos", [200, 700, 2040, 1160, 920]),
    ("1.bos", [200, 700, 2040, 1160, 925]),
    ("2.bos", [200, 700, 2040, 1160, 930]),
    ("3.bos", [200, 700, 2040, 1160, 935]),
    ("4.bos", [200, 700, 2040, 1160, 940]),
    ("5.bos", [200, 700, 2040, 1160, 945]),
    ("6.bos", [200, 700, 2040, 1160, 950]),
    ("7.bos", [200, 700, 2040, 1160, 955]),
    ("8.bos", [200, 700, 2040, 1160, 960]),
    ("9.bos", [200, 700, 2040, 1160, 965]),
    ("10.bos", [200, 700, 2040, 1160, 970]),
    ("11.bos", [200, 700, 2040, 1160, 975]),
];
